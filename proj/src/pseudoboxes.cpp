#include "psol/pseudoboxes.hpp"

#include "psol/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace psol {

using nlohmann::json;

const char* to_string(BoxMethod m)
{
    return m == BoxMethod::ddt ? "ddt" : "cam";
}

BoxMethod box_method_from_string(const std::string& s)
{
    if (s == "ddt")
        return BoxMethod::ddt;
    if (s == "cam")
        return BoxMethod::cam;
    throw ConfigError("unknown box method '" + s + "' (expected ddt or cam)");
}

const char* to_string(BoxSource s)
{
    switch (s) {
    case BoxSource::ddt:
        return "ddt";
    case BoxSource::cam:
        return "cam";
    case BoxSource::fullimage_fallback:
        return "fullimage-fallback";
    }
    return "?";
}

BoxSource box_source_from_string(const std::string& s)
{
    if (s == "ddt")
        return BoxSource::ddt;
    if (s == "cam")
        return BoxSource::cam;
    if (s == "fullimage-fallback")
        return BoxSource::fullimage_fallback;
    throw FormatError("unknown box source '" + s + "'");
}

std::optional<BoxXYWH> box_from_heatmap(const HeatMap& hm, const ImageRecord& rec)
{
    const HeatMap up = upsample_bilinear(hm, rec.net_input_size, rec.net_input_size);
    const auto box = extract_box(up);
    if (!box)
        return std::nullopt;
    return map_box_to_image(*box, rec.net_input_size, rec.orig_width, rec.orig_height);
}

namespace {

HeatMap thresholded_cam(const FeatureMap& fm, const ClassifierWeights& weights, int label, double ratio)
{
    HeatMap hm = cam_heatmap(fm, weights, label);
    const double lo = hm.minCoeff(), hi = hm.maxCoeff();
    if (hi <= lo)
        return HeatMap::Constant(hm.rows(), hm.cols(), -1.0);
    hm = (hm.array() - lo) / (hi - lo) - ratio;
    return hm;
}

} // namespace

std::vector<PseudoAnnotation> class_pseudo_boxes(std::span<const FeatureMap> fit_maps,
                                                 std::span<const ImageRecord* const> targets,
                                                 std::span<const FeatureMap* const> target_maps,
                                                 const PseudoBoxOptions& opts,
                                                 const ClassifierWeights* weights)
{
    if (targets.size() != target_maps.size())
        throw DimensionError("class_pseudo_boxes: targets and maps differ in length");

    std::optional<PrincipalDirection> pd;
    if (opts.method == BoxMethod::ddt) {
        if (fit_maps.empty())
            throw DataError("class_pseudo_boxes: no training feature maps to fit a direction");
        CovarianceAccumulator acc(fit_maps.front().d);
        for (const auto& fm : fit_maps)
            acc.add(fm);
        pd = principal_direction(acc);
        orient_direction(*pd, fit_maps);
    } else if (!weights) {
        throw ConfigError("the cam method requires classifier weights");
    }

    std::vector<PseudoAnnotation> out;
    out.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const ImageRecord& rec = *targets[i];
        const FeatureMap& fm = *target_maps[i];
        const HeatMap hm = pd ? project_heatmap(fm, *pd)
                              : thresholded_cam(fm, *weights, rec.class_label, opts.cam_threshold);
        PseudoAnnotation ann{rec.image_id, {}, pd ? BoxSource::ddt : BoxSource::cam};
        if (auto box = box_from_heatmap(hm, rec)) {
            ann.box = *box;
        } else {
            ann.box = full_image_box(rec.orig_width, rec.orig_height);
            ann.source = BoxSource::fullimage_fallback;
        }
        out.push_back(std::move(ann));
    }
    return out;
}

namespace {

std::vector<FeatureMap> load_class(const std::filesystem::path& dir, Split split, int label)
{
    const auto path = class_feature_path(dir, split, label);
    if (!std::filesystem::exists(path))
        throw DataError("missing feature file '" + path.string() + "'");
    return read_tensor_file(path);
}

const FeatureMap& find_map(const std::unordered_map<std::string, const FeatureMap*>& by_id,
                           const std::string& id, int label)
{
    const auto it = by_id.find(id);
    if (it == by_id.end())
        throw DataError("no feature map for image '" + id + "' in class " + std::to_string(label));
    return *it->second;
}

std::vector<PseudoAnnotation> run_class(const Manifest& manifest, const std::filesystem::path& dir,
                                        int label, const PseudoBoxOptions& opts,
                                        const ClassifierWeights* weights)
{
    std::vector<const ImageRecord*> train, targets;
    for (const auto& r : manifest.records()) {
        if (r.class_label != label)
            continue;
        if (r.split == Split::train)
            train.push_back(&r);
        if (r.split == opts.target_split)
            targets.push_back(&r);
    }
    if (targets.empty())
        return {};
    std::sort(targets.begin(), targets.end(),
              [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });

    std::vector<FeatureMap> train_file;
    std::vector<FeatureMap> fit_maps;
    if (opts.method == BoxMethod::ddt || opts.target_split == Split::train) {
        train_file = load_class(dir, Split::train, label);
        std::unordered_map<std::string, const FeatureMap*> by_id;
        for (const auto& fm : train_file)
            by_id.emplace(fm.image_id, &fm);
        // Fit only on images the manifest lists for this class.
        fit_maps.reserve(train.size());
        for (const auto* r : train)
            fit_maps.push_back(find_map(by_id, r->image_id, label));
    }

    std::vector<FeatureMap> target_file;
    const std::vector<FeatureMap>* target_source = &fit_maps;
    if (opts.target_split != Split::train) {
        target_file = load_class(dir, opts.target_split, label);
        target_source = &target_file;
    }
    std::unordered_map<std::string, const FeatureMap*> target_by_id;
    for (const auto& fm : *target_source)
        target_by_id.emplace(fm.image_id, &fm);
    std::vector<const FeatureMap*> target_maps;
    target_maps.reserve(targets.size());
    for (const auto* r : targets)
        target_maps.push_back(&find_map(target_by_id, r->image_id, label));

    return class_pseudo_boxes(fit_maps, targets, target_maps, opts, weights);
}

} // namespace

std::vector<PseudoAnnotation> generate_pseudo_boxes(const Manifest& manifest,
                                                    const std::filesystem::path& feature_dir,
                                                    const PseudoBoxOptions& opts,
                                                    const ClassifierWeights* weights)
{
    if (opts.method == BoxMethod::cam && !weights)
        throw ConfigError("the cam method requires classifier weights");

    std::vector<int> labels;
    for (const auto& r : manifest.records()) {
        if (r.split == opts.target_split)
            labels.push_back(r.class_label);
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

    std::vector<std::vector<PseudoAnnotation>> per_class(labels.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < labels.size(); i = next++) {
            try {
                per_class[i] = run_class(manifest, feature_dir, labels[i], opts, weights);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
                next = labels.size();
            }
        }
    };
    const int threads = std::clamp<int>(opts.threads, 1, std::max<int>(1, int(labels.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }
    if (failure)
        std::rethrow_exception(failure);

    std::vector<PseudoAnnotation> out;
    for (auto& v : per_class)
        std::move(v.begin(), v.end(), std::back_inserter(out));
    return out;
}

void write_pseudo_annotations(std::span<const PseudoAnnotation> anns, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path.string() + "' for writing");
    for (const auto& a : anns) {
        json j{{"image_id", a.image_id},
               {"box", {{"x", a.box.x}, {"y", a.box.y}, {"w", a.box.w}, {"h", a.box.h}}},
               {"source", to_string(a.source)}};
        out << j.dump() << '\n';
    }
}

std::vector<PseudoAnnotation> read_pseudo_annotations(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open annotation file '" + path.string() + "'");
    std::vector<PseudoAnnotation> out;
    std::unordered_set<std::string> seen;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto where = path.string() + " line " + std::to_string(lineno) + ": ";
        PseudoAnnotation a;
        try {
            const auto j = json::parse(line);
            a.image_id = j.at("image_id").get<std::string>();
            const auto& b = j.at("box");
            a.box = {b.at("x").get<double>(), b.at("y").get<double>(), b.at("w").get<double>(),
                     b.at("h").get<double>()};
            a.source = j.contains("source") ? box_source_from_string(j.at("source").get<std::string>())
                                            : BoxSource::ddt;
        } catch (const json::exception& e) {
            throw FormatError(where + e.what());
        } catch (const FormatError& e) {
            throw FormatError(where + e.what());
        }
        if (!(a.box.w > 0 && a.box.h > 0) || a.box.x < 0 || a.box.y < 0)
            throw ValidationError(where + "invalid box for '" + a.image_id + "'");
        if (!seen.insert(a.image_id).second)
            throw ValidationError(where + "duplicate image_id '" + a.image_id + "'");
        out.push_back(std::move(a));
    }
    return out;
}

void check_against_manifest(std::span<const PseudoAnnotation> anns, const Manifest& manifest)
{
    for (const auto& a : anns) {
        const auto* rec = manifest.find(a.image_id);
        if (!rec)
            throw ValidationError("annotation for unknown image_id '" + a.image_id + "'");
        if (!box_within(a.box, rec->orig_width, rec->orig_height, 1e-6))
            throw ValidationError("annotation box for '" + a.image_id + "' exceeds the image bounds");
    }
}

} // namespace psol
