#include "psol/tensor_io.hpp"

#include "psol/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace psol {

using nlohmann::json;

FeatureMap::FeatureMap(std::string id, int rows, int cols, int depth)
    : image_id(std::move(id)), h(rows), w(cols), d(depth), values(DescriptorMatrix::Zero(rows * cols, depth))
{
}

void validate(const FeatureMap& fm)
{
    if (fm.h <= 0 || fm.w <= 0 || fm.d <= 0)
        throw ValidationError("feature map '" + fm.image_id + "': dimensions must be positive");
    if (fm.values.rows() != Eigen::Index(fm.h) * fm.w || fm.values.cols() != fm.d)
        throw ValidationError("feature map '" + fm.image_id + "': h*w*d does not match the stored element count");
    if (!fm.values.allFinite())
        throw ValidationError("feature map '" + fm.image_id + "': non-finite value");
}

namespace {

void put_u16(std::ostream& out, std::uint16_t v)
{
    const char b[2] = {char(v & 0xff), char(v >> 8)};
    out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v)
{
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
    out.write(b, 4);
}

std::uint32_t le_u32(const unsigned char* b)
{
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    // Returns false on short read.
    bool bytes(void* dst, std::size_t n)
    {
        in_.read(static_cast<char*>(dst), std::streamsize(n));
        return std::size_t(in_.gcount()) == n;
    }

    bool u16(std::uint16_t& v)
    {
        unsigned char b[2];
        if (!bytes(b, 2))
            return false;
        v = std::uint16_t(b[0] | b[1] << 8);
        return true;
    }

    bool u32(std::uint32_t& v)
    {
        unsigned char b[4];
        if (!bytes(b, 4))
            return false;
        v = le_u32(b);
        return true;
    }

private:
    std::istream& in_;
};

[[noreturn]] void truncated(std::uint32_t index, const char* what)
{
    std::ostringstream msg;
    msg << "tensor file truncated in record " << index << " (" << what << ")";
    throw TruncationError(msg.str());
}

} // namespace

void write_tensors(std::span<const FeatureMap> records, std::ostream& out)
{
    if (!records.empty()) {
        const int d = records.front().d;
        for (const auto& r : records) {
            if (r.d != d)
                throw FormatError("write_tensor_file: mixed depth (" + std::to_string(d) + " vs " +
                                  std::to_string(r.d) + " in '" + r.image_id + "')");
        }
    }
    for (const auto& r : records) {
        validate(r);
        if (r.image_id.size() > 0xffff)
            throw FormatError("write_tensor_file: image id longer than 65535 bytes");
    }
    out.write(kTensorMagic, 8);
    put_u32(out, kTensorVersion);
    put_u32(out, std::uint32_t(records.size()));

    std::vector<char> buf;
    for (const auto& r : records) {
        put_u16(out, std::uint16_t(r.image_id.size()));
        out.write(r.image_id.data(), std::streamsize(r.image_id.size()));
        put_u32(out, std::uint32_t(r.h));
        put_u32(out, std::uint32_t(r.w));
        put_u32(out, std::uint32_t(r.d));
        const auto n = std::size_t(r.values.size());
        buf.resize(n * 4);
        const float* src = r.values.data();
        for (std::size_t i = 0; i < n; ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(src[i]);
            buf[4 * i + 0] = char(bits & 0xff);
            buf[4 * i + 1] = char((bits >> 8) & 0xff);
            buf[4 * i + 2] = char((bits >> 16) & 0xff);
            buf[4 * i + 3] = char(bits >> 24);
        }
        out.write(buf.data(), std::streamsize(buf.size()));
    }
    if (!out)
        throw Error("write_tensor_file: stream write failed");
}

std::vector<FeatureMap> read_tensors(std::istream& in)
{
    Reader rd(in);
    char magic[8];
    if (!rd.bytes(magic, 8))
        throw TruncationError("tensor file truncated in header");
    if (std::memcmp(magic, kTensorMagic, 8) != 0)
        throw FormatError("not a PSOLTNSR file (bad magic)");
    std::uint32_t version = 0, count = 0;
    if (!rd.u32(version) || !rd.u32(count))
        throw TruncationError("tensor file truncated in header");
    if (version != kTensorVersion)
        throw FormatError("unsupported PSOLTNSR version " + std::to_string(version));

    std::vector<FeatureMap> out;
    out.reserve(std::min<std::uint32_t>(count, 1u << 16));
    std::vector<unsigned char> buf;
    for (std::uint32_t r = 0; r < count; ++r) {
        std::uint16_t id_len = 0;
        if (!rd.u16(id_len))
            truncated(r, "id length");
        std::string id(id_len, '\0');
        if (!rd.bytes(id.data(), id_len))
            truncated(r, "id");
        std::uint32_t h = 0, w = 0, d = 0;
        if (!rd.u32(h) || !rd.u32(w) || !rd.u32(d))
            truncated(r, "shape");
        if (h == 0 || w == 0 || d == 0)
            throw FormatError("record " + std::to_string(r) + " ('" + id + "') has a zero dimension");
        if (!out.empty() && int(d) != out.front().d)
            throw FormatError("record " + std::to_string(r) + " has depth " + std::to_string(d) +
                              ", expected " + std::to_string(out.front().d));
        const std::uint64_t n = std::uint64_t(h) * w * d;
        if (n > (std::uint64_t(1) << 34))
            throw FormatError("record " + std::to_string(r) + " is implausibly large");

        FeatureMap fm;
        fm.image_id = std::move(id);
        fm.h = int(h);
        fm.w = int(w);
        fm.d = int(d);
        fm.values.resize(Eigen::Index(h) * w, d);
        buf.resize(n * 4);
        if (!rd.bytes(buf.data(), buf.size()))
            truncated(r, "values");
        float* dst = fm.values.data();
        for (std::uint64_t i = 0; i < n; ++i)
            dst[i] = std::bit_cast<float>(le_u32(&buf[4 * i]));
        if (!fm.values.allFinite())
            throw ValidationError("record " + std::to_string(r) + " ('" + fm.image_id + "') has a non-finite value");
        out.push_back(std::move(fm));
    }
    return out;
}

void write_tensor_file(std::span<const FeatureMap> records, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path.string() + "' for writing");
    write_tensors(records, out);
}

std::vector<FeatureMap> read_tensor_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open tensor file '" + path.string() + "'");
    try {
        return read_tensors(in);
    } catch (const TruncationError& e) {
        throw TruncationError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- manifest

const char* to_string(Split s)
{
    return s == Split::train ? "train" : "test";
}

Split split_from_string(const std::string& s)
{
    if (s == "train")
        return Split::train;
    if (s == "test")
        return Split::test;
    throw ValidationError("unknown split '" + s + "'");
}

void validate(const ImageRecord& rec)
{
    const auto fail = [&](const std::string& what) {
        throw ValidationError("image '" + rec.image_id + "': " + what);
    };
    if (rec.image_id.empty())
        throw ValidationError("image record with empty image_id");
    if (rec.class_label < 0)
        fail("class_label must be >= 0");
    if (rec.orig_width <= 0 || rec.orig_height <= 0)
        fail("original dimensions must be positive");
    if (rec.net_input_size <= 0)
        fail("net_input_size must be positive");
    if (rec.gt_box) {
        const auto& b = *rec.gt_box;
        if (!(b.w > 0 && b.h > 0))
            fail("gt_box must have positive width and height");
        if (b.x < 0 || b.y < 0 || b.right() > rec.orig_width || b.bottom() > rec.orig_height)
            fail("gt_box exceeds the image bounds");
    }
}

Manifest::Manifest(std::vector<ImageRecord> records) : records_(std::move(records))
{
    for (std::size_t i = 0; i < records_.size(); ++i) {
        validate(records_[i]);
        if (!index_.emplace(records_[i].image_id, i).second)
            throw ValidationError("duplicate image_id '" + records_[i].image_id + "'");
    }
}

const ImageRecord* Manifest::find(const std::string& image_id) const
{
    const auto it = index_.find(image_id);
    return it == index_.end() ? nullptr : &records_[it->second];
}

const ImageRecord& Manifest::at(const std::string& image_id) const
{
    const auto* rec = find(image_id);
    if (!rec)
        throw DataError("unknown image_id '" + image_id + "'");
    return *rec;
}

std::vector<const ImageRecord*> Manifest::split(Split s) const
{
    std::vector<const ImageRecord*> out;
    for (const auto& r : records_) {
        if (r.split == s)
            out.push_back(&r);
    }
    return out;
}

int Manifest::num_classes() const
{
    int c = 0;
    for (const auto& r : records_)
        c = std::max(c, r.class_label + 1);
    return c;
}

namespace {

BoxXYWH box_from_json(const json& j)
{
    return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
}

ImageRecord record_from_json(const json& j)
{
    ImageRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.class_label = j.at("class_label").get<int>();
    r.orig_width = j.at("orig_width").get<int>();
    r.orig_height = j.at("orig_height").get<int>();
    r.net_input_size = j.at("net_input_size").get<int>();
    if (j.contains("gt_box") && !j.at("gt_box").is_null())
        r.gt_box = box_from_json(j.at("gt_box"));
    r.split = split_from_string(j.at("split").get<std::string>());
    return r;
}

json box_to_json(const BoxXYWH& b)
{
    return json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
}

bool blank(const std::string& line)
{
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

} // namespace

Manifest parse_manifest(std::istream& in)
{
    std::vector<ImageRecord> records;
    std::unordered_set<std::string> seen;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (blank(line))
            continue;
        ImageRecord rec;
        try {
            rec = record_from_json(json::parse(line));
        } catch (const json::exception& e) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            validate(rec);
        } catch (const ValidationError& e) {
            throw ValidationError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(rec.image_id).second)
            throw ValidationError("manifest line " + std::to_string(lineno) + ": duplicate image_id '" +
                                  rec.image_id + "'");
        records.push_back(std::move(rec));
    }
    return Manifest(std::move(records));
}

Manifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open manifest '" + path.string() + "'");
    return parse_manifest(in);
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path.string() + "' for writing");
    for (const auto& r : manifest.records()) {
        json j{{"image_id", r.image_id},
               {"class_label", r.class_label},
               {"orig_width", r.orig_width},
               {"orig_height", r.orig_height},
               {"net_input_size", r.net_input_size},
               {"split", to_string(r.split)}};
        if (r.gt_box)
            j["gt_box"] = box_to_json(*r.gt_box);
        out << j.dump() << '\n';
    }
}

// ------------------------------------------------------- classifier outputs

std::vector<ClassifierOutputs> read_classifier_outputs(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open scores file '" + path.string() + "'");
    std::vector<ClassifierOutputs> out;
    std::unordered_set<std::string> seen;
    std::string line;
    Eigen::Index classes = -1;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (blank(line))
            continue;
        const auto where = path.string() + " line " + std::to_string(lineno) + ": ";
        ClassifierOutputs co;
        try {
            const auto j = json::parse(line);
            co.image_id = j.at("image_id").get<std::string>();
            const auto s = j.at("scores").get<std::vector<double>>();
            co.scores.resize(Eigen::Index(s.size()));
            for (std::size_t i = 0; i < s.size(); ++i)
                co.scores[Eigen::Index(i)] = float(s[i]);
        } catch (const json::exception& e) {
            throw FormatError(where + e.what());
        }
        if (co.scores.size() == 0 || !co.scores.allFinite())
            throw ValidationError(where + "scores must be a non-empty array of finite numbers");
        if (classes >= 0 && co.scores.size() != classes)
            throw ValidationError(where + "inconsistent class count");
        classes = co.scores.size();
        if (!seen.insert(co.image_id).second)
            throw ValidationError(where + "duplicate image_id '" + co.image_id + "'");
        out.push_back(std::move(co));
    }
    return out;
}

void write_classifier_outputs(std::span<const ClassifierOutputs> outputs, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path.string() + "' for writing");
    for (const auto& co : outputs) {
        json j{{"image_id", co.image_id}, {"scores", std::vector<float>(co.scores.begin(), co.scores.end())}};
        out << j.dump() << '\n';
    }
}

ClassifierWeights read_classifier_weights(const std::filesystem::path& path)
{
    auto recs = read_tensor_file(path);
    if (recs.size() != 1 || recs.front().h != 1)
        throw FormatError(path.string() + ": classifier weights must be a single 1 x C x d record");
    const auto& r = recs.front();
    return r.values.cast<float>(); // w x d, row-major -> column-major copy
}

void write_classifier_weights(const ClassifierWeights& w, const std::filesystem::path& path)
{
    FeatureMap rec("classifier_weights", 1, int(w.rows()), int(w.cols()));
    rec.values = w;
    write_tensor_file(std::span(&rec, 1), path);
}

// ---------------------------------------------------------- pooled features

PooledFeatures::PooledFeatures(std::vector<std::string> ids, Eigen::MatrixXf values)
    : ids_(std::move(ids)), values_(std::move(values))
{
    if (Eigen::Index(ids_.size()) != values_.cols())
        throw DimensionError("pooled features: id count does not match column count");
    if (!values_.allFinite())
        throw ValidationError("pooled features: non-finite value");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!index_.emplace(ids_[i], Eigen::Index(i)).second)
            throw ValidationError("pooled features: duplicate image_id '" + ids_[i] + "'");
    }
}

std::optional<Eigen::Index> PooledFeatures::find(const std::string& id) const
{
    const auto it = index_.find(id);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

Eigen::MatrixXd PooledFeatures::gather(std::span<const std::string> ids) const
{
    Eigen::MatrixXd out(values_.rows(), Eigen::Index(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto col = find(ids[i]);
        if (!col)
            throw DataError("no pooled feature for image '" + ids[i] + "'");
        out.col(Eigen::Index(i)) = values_.col(*col).cast<double>();
    }
    return out;
}

PooledFeatures read_pooled_features(const std::filesystem::path& path)
{
    auto recs = read_tensor_file(path);
    std::vector<std::string> ids;
    ids.reserve(recs.size());
    const Eigen::Index d = recs.empty() ? 0 : recs.front().d;
    Eigen::MatrixXf values(d, Eigen::Index(recs.size()));
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].h != 1 || recs[i].w != 1)
            throw FormatError(path.string() + ": pooled feature '" + recs[i].image_id + "' is not 1 x 1 x d");
        values.col(Eigen::Index(i)) = recs[i].values.row(0).transpose();
        ids.push_back(std::move(recs[i].image_id));
    }
    return PooledFeatures(std::move(ids), std::move(values));
}

void write_pooled_features(const PooledFeatures& pf, const std::filesystem::path& path)
{
    std::vector<FeatureMap> recs;
    recs.reserve(pf.size());
    for (std::size_t i = 0; i < pf.size(); ++i) {
        FeatureMap fm(pf.ids()[i], 1, 1, pf.dim());
        fm.values.row(0) = pf.values().col(Eigen::Index(i)).transpose();
        recs.push_back(std::move(fm));
    }
    write_tensor_file(recs, path);
}

std::filesystem::path class_feature_path(const std::filesystem::path& dir, Split split, int label)
{
    return dir / to_string(split) / ("class_" + std::to_string(label) + ".psoltnsr");
}

} // namespace psol
