#include "psol/checkpoint.hpp"

#include "psol/config.hpp"
#include "psol/error.hpp"
#include "psol/tensor_io.hpp"

#include <fstream>
#include <map>

namespace psol {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& path)
{
    auto p = path;
    p += ".json";
    return p;
}

namespace {

template <typename Derived>
FeatureMap as_record(const std::string& name, const Eigen::MatrixBase<Derived>& m)
{
    FeatureMap rec(name, int(m.rows()), int(m.cols()), 1);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            rec.values(i * m.cols() + j, 0) = float(m(i, j));
    return rec;
}

Eigen::MatrixXd as_matrix(const FeatureMap& rec)
{
    Eigen::MatrixXd m(rec.h, rec.w);
    for (int i = 0; i < rec.h; ++i)
        for (int j = 0; j < rec.w; ++j)
            m(i, j) = rec.values(Eigen::Index(i) * rec.w + j, 0);
    return m;
}

} // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    std::vector<FeatureMap> recs;
    json side{{"format", "psol-checkpoint"}, {"epoch", ckpt.epoch}, {"seed", ckpt.config.seed}};
    side["config"] = ckpt.config;
    if (ckpt.reg) {
        const auto& p = *ckpt.reg;
        recs.push_back(as_record("W1", p.W1));
        recs.push_back(as_record("b1", p.b1.transpose()));
        recs.push_back(as_record("W2", p.W2));
        recs.push_back(as_record("b2", p.b2.transpose()));
        side["regressor"] = {{"input_dim", p.input_dim()}, {"hidden", p.hidden()}};
    }
    if (ckpt.cls) {
        const auto& p = *ckpt.cls;
        recs.push_back(as_record("Wc", p.Wc));
        recs.push_back(as_record("bc", p.bc.transpose()));
        side["classifier"] = {{"input_dim", p.input_dim()}, {"classes", p.classes()}};
    }
    write_tensor_file(recs, path);
    std::ofstream out(sidecar_path(path), std::ios::trunc);
    if (!out)
        throw Error("cannot write checkpoint sidecar for '" + path.string() + "'");
    out << side.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    const auto recs = read_tensor_file(path);
    std::map<std::string, Eigen::MatrixXd> by_name;
    for (const auto& r : recs) {
        if (r.d != 1)
            throw FormatError(path.string() + ": checkpoint tensor '" + r.image_id + "' must have depth 1");
        if (!by_name.emplace(r.image_id, as_matrix(r)).second)
            throw FormatError(path.string() + ": duplicate checkpoint tensor '" + r.image_id + "'");
    }
    const auto has = [&](const char* k) { return by_name.count(k) > 0; };
    const auto bad = [&](const std::string& why) { throw FormatError(path.string() + ": " + why); };

    Checkpoint ckpt;
    const bool any_reg = has("W1") || has("b1") || has("W2") || has("b2");
    if (any_reg) {
        if (!(has("W1") && has("b1") && has("W2") && has("b2")))
            bad("incomplete regressor (need W1, b1, W2, b2)");
        const auto& W1 = by_name["W1"];
        const auto& b1 = by_name["b1"];
        const auto& W2 = by_name["W2"];
        const auto& b2 = by_name["b2"];
        if (b1.rows() != 1 || b1.cols() != W1.rows() || W2.rows() != 4 || W2.cols() != W1.rows() ||
            b2.rows() != 1 || b2.cols() != 4)
            bad("regressor tensor shapes are inconsistent");
        RegressorParamsd p(int(W1.cols()), int(W1.rows()));
        p.W1 = W1;
        p.b1 = b1.transpose();
        p.W2 = W2;
        p.b2 = b2.transpose();
        ckpt.reg = std::move(p);
    }
    if (has("Wc") || has("bc")) {
        if (!(has("Wc") && has("bc")))
            bad("incomplete classifier (need Wc, bc)");
        const auto& Wc = by_name["Wc"];
        const auto& bc = by_name["bc"];
        if (bc.rows() != 1 || bc.cols() != Wc.rows())
            bad("classifier tensor shapes are inconsistent");
        ClassifierParamsd p(int(Wc.cols()), int(Wc.rows()));
        p.Wc = Wc;
        p.bc = bc.transpose();
        ckpt.cls = std::move(p);
    }
    if (!ckpt.reg && !ckpt.cls)
        bad("checkpoint holds neither a regressor nor a classifier");

    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        std::ifstream in(side);
        try {
            const auto j = json::parse(in);
            if (j.contains("config"))
                ckpt.config = j.at("config").get<TrainConfig>();
            ckpt.epoch = j.value("epoch", 0);
        } catch (const json::exception& e) {
            bad(std::string("malformed sidecar: ") + e.what());
        } catch (const ConfigError& e) {
            bad(std::string("malformed sidecar: ") + e.what());
        }
    }
    return ckpt;
}

} // namespace psol
