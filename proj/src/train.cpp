#include "psol/train.hpp"

#include "psol/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

namespace psol {

namespace {

// Independent RNG streams derived from the seed, so that each head's
// initialization and the batch order do not depend on which heads train.
enum Stream : std::uint64_t { kShuffle = 0, kRegInit = 1, kClsInit = 2 };

std::mt19937_64 stream(std::uint64_t seed, Stream s)
{
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(s)};
    return std::mt19937_64(seq);
}

void check_config(const TrainConfig& cfg)
{
    if (!(cfg.lr > 0) || cfg.momentum < 0 || cfg.momentum >= 1 || cfg.weight_decay < 0 || cfg.batch_size <= 0 ||
        cfg.epochs < 0 || cfg.hidden <= 0 || !(cfg.lr_mult > 0) || cfg.lambda < 0)
        throw ConfigError("invalid training configuration");
}

SgdRates rates(const TrainConfig& cfg, int epoch)
{
    return {cfg.lr_at(epoch), cfg.momentum, cfg.weight_decay};
}

// Calls body(batch_indices) for each mini-batch of a seeded per-epoch shuffle.
template <typename Body>
void for_each_batch(std::mt19937_64& rng, std::vector<Eigen::Index>& order, int batch_size, Body&& body)
{
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
        const std::size_t end = std::min(order.size(), start + std::size_t(batch_size));
        body(std::span<const Eigen::Index>(order.data() + start, end - start));
    }
}

void check_finite(double loss, const char* what, int epoch, std::size_t batch)
{
    if (!std::isfinite(loss)) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "%s loss became non-finite at epoch %d, batch %zu; lower the learning rate",
                      what, epoch + 1, batch);
        throw NumericError(msg);
    }
}

std::vector<Eigen::Index> iota_order(Eigen::Index n)
{
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    return order;
}

std::vector<int> pick(const std::vector<int>& labels, std::span<const Eigen::Index> idx)
{
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out[i] = labels[std::size_t(idx[i])];
    return out;
}

void check_labels(const std::vector<int>& labels, Eigen::Index n, int classes)
{
    if (Eigen::Index(labels.size()) != n)
        throw DimensionError("label count does not match feature count");
    for (int l : labels) {
        if (l < 0 || l >= classes)
            throw ValidationError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
}

} // namespace

RegressorParamsd initial_regressor(int input_dim, const TrainConfig& cfg)
{
    auto rng = stream(cfg.seed, kRegInit);
    return init_regressor<double>(input_dim, cfg.hidden, rng);
}

ClassifierParamsd initial_classifier(int input_dim, int classes, const TrainConfig& cfg)
{
    auto rng = stream(cfg.seed, kClsInit);
    return init_classifier<double>(input_dim, classes, rng);
}

RegressorRun train_regressor(const Eigen::MatrixXd& x, const BoxMatrix<double>& targets, const TrainConfig& cfg)
{
    check_config(cfg);
    if (targets.cols() != x.cols())
        throw DimensionError("train_regressor: target count does not match feature count");
    RegressorRun run{initial_regressor(int(x.rows()), cfg), {}};
    auto rng = stream(cfg.seed, kShuffle);
    auto order = iota_order(x.cols());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const SgdRates r = rates(cfg, epoch);
        double total = 0;
        std::size_t batch = 0;
        for_each_batch(rng, order, cfg.batch_size, [&](std::span<const Eigen::Index> idx) {
            const Eigen::MatrixXd xb = x(Eigen::all, idx);
            const BoxMatrix<double> tb = targets(Eigen::all, idx);
            const auto trace = reg_forward_trace(run.params, xb);
            const double loss = reg_loss<double>(trace.out, tb);
            check_finite(loss, "regression", epoch, batch++);
            total += loss * double(idx.size());
            sgd_step(run.params, reg_backward(run.params, xb, tb, trace), r);
        });
        run.loss.push_back(x.cols() ? total / double(x.cols()) : 0.0);
    }
    return run;
}

ClassifierRun train_classifier(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                               const TrainConfig& cfg)
{
    check_config(cfg);
    check_labels(labels, x.cols(), classes);
    ClassifierRun run{initial_classifier(int(x.rows()), classes, cfg), {}};
    auto rng = stream(cfg.seed, kShuffle);
    auto order = iota_order(x.cols());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const SgdRates r = rates(cfg, epoch);
        double total = 0;
        std::size_t batch = 0;
        for_each_batch(rng, order, cfg.batch_size, [&](std::span<const Eigen::Index> idx) {
            const Eigen::MatrixXd xb = x(Eigen::all, idx);
            const auto lb = pick(labels, idx);
            const double loss = cls_loss<double>(cls_logits(run.params, xb), lb);
            check_finite(loss, "classification", epoch, batch++);
            total += loss * double(idx.size());
            sgd_step(run.params, cls_backward(run.params, xb, lb), r);
        });
        run.loss.push_back(x.cols() ? total / double(x.cols()) : 0.0);
    }
    return run;
}

JointRun train_joint(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                     const BoxMatrix<double>& targets, const TrainConfig& cfg)
{
    check_config(cfg);
    check_labels(labels, x.cols(), classes);
    if (targets.cols() != x.cols())
        throw DimensionError("train_joint: target count does not match feature count");
    JointRun run{initial_regressor(int(x.rows()), cfg), initial_classifier(int(x.rows()), classes, cfg), {}, {}, {}};
    auto rng = stream(cfg.seed, kShuffle);
    auto order = iota_order(x.cols());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const SgdRates r = rates(cfg, epoch);
        double total_cls = 0, total_reg = 0;
        std::size_t batch = 0;
        for_each_batch(rng, order, cfg.batch_size, [&](std::span<const Eigen::Index> idx) {
            const Eigen::MatrixXd xb = x(Eigen::all, idx);
            const BoxMatrix<double> tb = targets(Eigen::all, idx);
            const auto lb = pick(labels, idx);
            const auto trace = reg_forward_trace(run.reg, xb);
            const double lr_ = reg_loss<double>(trace.out, tb);
            const double lc = cls_loss<double>(cls_logits(run.cls, xb), lb);
            check_finite(lc + cfg.lambda * lr_, "joint", epoch, batch++);
            total_cls += lc * double(idx.size());
            total_reg += lr_ * double(idx.size());
            // The heads share no parameters, so the summed loss splits into
            // one gradient per head.
            const auto gr = reg_backward(run.reg, xb, tb, trace, cfg.lambda);
            const auto gc = cls_backward(run.cls, xb, lb);
            sgd_step(run.reg, gr, r);
            sgd_step(run.cls, gc, r);
        });
        const double n = x.cols() ? double(x.cols()) : 1.0;
        run.cls_loss.push_back(total_cls / n);
        run.reg_loss.push_back(total_reg / n);
        run.loss.push_back((total_cls + cfg.lambda * total_reg) / n);
    }
    return run;
}

RegressionSet regression_set(const PooledFeatures& pooled, std::span<const PseudoAnnotation> anns,
                             const Manifest& manifest)
{
    RegressionSet set;
    set.ids.reserve(anns.size());
    set.targets.resize(4, Eigen::Index(anns.size()));
    for (std::size_t i = 0; i < anns.size(); ++i) {
        const auto& rec = manifest.at(anns[i].image_id);
        set.ids.push_back(anns[i].image_id);
        set.targets.col(Eigen::Index(i)) = to_vector(normalize_box(anns[i].box, rec.orig_width, rec.orig_height));
    }
    set.x = pooled.gather(set.ids);
    return set;
}

ClassificationSet classification_set(const PooledFeatures& pooled, const Manifest& manifest, Split split)
{
    ClassificationSet set;
    for (const auto* rec : manifest.split(split)) {
        set.ids.push_back(rec->image_id);
        set.labels.push_back(rec->class_label);
    }
    set.x = pooled.gather(set.ids);
    return set;
}

RegressorRun train_regressor(const PooledFeatures& pooled, std::span<const PseudoAnnotation> anns,
                             const Manifest& manifest, const TrainConfig& cfg)
{
    const auto set = regression_set(pooled, anns, manifest);
    return train_regressor(set.x, set.targets, cfg);
}

ClassifierRun train_classifier(const PooledFeatures& pooled, const Manifest& manifest, int classes,
                               const TrainConfig& cfg)
{
    const auto set = classification_set(pooled, manifest, Split::train);
    return train_classifier(set.x, set.labels, classes, cfg);
}

JointRun train_joint(const PooledFeatures& pooled, std::span<const PseudoAnnotation> anns,
                     const Manifest& manifest, int classes, const TrainConfig& cfg)
{
    const auto set = regression_set(pooled, anns, manifest);
    std::vector<int> labels;
    labels.reserve(set.ids.size());
    for (const auto& id : set.ids)
        labels.push_back(manifest.at(id).class_label);
    return train_joint(set.x, labels, classes, set.targets, cfg);
}

std::vector<PredictedBox> predict_boxes(const RegressorParamsd& params, const PooledFeatures& pooled,
                                        const Manifest& manifest, Split split)
{
    const auto records = manifest.split(split);
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto* r : records)
        ids.push_back(r->image_id);
    const Eigen::MatrixXd x = pooled.gather(ids);
    const BoxMatrix<double> out = reg_forward(params, x);
    std::vector<PredictedBox> preds;
    preds.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto* r = records[i];
        preds.push_back({r->image_id, denormalize_box(to_box(out.col(Eigen::Index(i))), r->orig_width, r->orig_height)});
    }
    return preds;
}

std::vector<ClassifierOutputs> classify(const ClassifierParamsd& params, const PooledFeatures& pooled,
                                        const Manifest& manifest, Split split)
{
    const auto records = manifest.split(split);
    std::vector<std::string> ids;
    for (const auto* r : records)
        ids.push_back(r->image_id);
    const Eigen::MatrixXd probs = softmax<double>(cls_logits(params, pooled.gather(ids)));
    std::vector<ClassifierOutputs> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        out.push_back({ids[i], probs.col(Eigen::Index(i)).cast<float>()});
    return out;
}

void write_predictions(std::span<const PredictedBox> preds, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path.string() + "' for writing");
    for (const auto& p : preds) {
        nlohmann::json j{{"image_id", p.image_id},
                         {"box", {{"x", p.box.x}, {"y", p.box.y}, {"w", p.box.w}, {"h", p.box.h}}}};
        out << j.dump() << '\n';
    }
}

std::vector<PredictedBox> read_predictions(const std::filesystem::path& path)
{
    // Same line schema as pseudo annotations; "source" is optional.
    std::vector<PredictedBox> out;
    for (auto& a : read_pseudo_annotations(path))
        out.push_back({std::move(a.image_id), a.box});
    return out;
}

void write_loss_csv(std::span<const double> loss, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path.string() + "' for writing");
    out << "epoch,split,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", loss[i]);
        out << (i + 1) << ",train," << buf << '\n';
    }
}

} // namespace psol
