#include "psol/eval.hpp"

#include "psol/error.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace psol {

bool gt_known(const BoxXYWH& pred, const BoxXYWH& gt)
{
    return iou(pred, gt) >= kGtKnownIou;
}

int class_rank(const Eigen::VectorXf& scores, int label)
{
    if (label < 0 || label >= scores.size())
        throw DimensionError("class label " + std::to_string(label) + " outside the score vector of size " +
                             std::to_string(scores.size()));
    const float s = scores[label];
    int rank = 1;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
        if (scores[j] > s || (scores[j] == s && j < label))
            ++rank;
    }
    return rank;
}

bool top1_correct(const Eigen::VectorXf& scores, int gt_label, const BoxXYWH& pred, const BoxXYWH& gt)
{
    return class_rank(scores, gt_label) == 1 && gt_known(pred, gt);
}

bool top5_correct(const Eigen::VectorXf& scores, int gt_label, const BoxXYWH& pred, const BoxXYWH& gt)
{
    return class_rank(scores, gt_label) <= 5 && gt_known(pred, gt);
}

EvalReport evaluate_run(std::span<const PredictedBox> predictions, const std::vector<ClassifierOutputs>* scores,
                        const Manifest& manifest, Split split)
{
    std::unordered_map<std::string, const BoxXYWH*> pred_by_id;
    for (const auto& p : predictions) {
        if (!manifest.find(p.image_id))
            throw DataError("prediction for unknown image_id '" + p.image_id + "'");
        if (!pred_by_id.emplace(p.image_id, &p.box).second)
            throw DataError("duplicate prediction for '" + p.image_id + "'");
    }
    std::unordered_map<std::string, const Eigen::VectorXf*> scores_by_id;
    if (scores) {
        for (const auto& s : *scores) {
            if (!manifest.find(s.image_id))
                throw DataError("classifier outputs for unknown image_id '" + s.image_id + "'");
            scores_by_id.emplace(s.image_id, &s.scores);
        }
    }

    EvalReport rep;
    std::size_t known = 0, top1 = 0, top5 = 0, cls1 = 0, cls5 = 0;
    for (const auto& rec : manifest.records()) {
        if (rec.split != split)
            continue;
        if (!rec.gt_box) {
            ++rep.skipped_no_gt;
            continue;
        }
        const auto it = pred_by_id.find(rec.image_id);
        if (it == pred_by_id.end())
            throw DataError("no prediction for image '" + rec.image_id + "'");
        ImageVerdict v;
        v.image_id = rec.image_id;
        v.iou = iou(*it->second, *rec.gt_box);
        v.gt_known = v.iou >= kGtKnownIou;
        if (scores) {
            const auto st = scores_by_id.find(rec.image_id);
            if (st == scores_by_id.end())
                throw DataError("no classifier outputs for image '" + rec.image_id + "'");
            v.gt_rank = class_rank(*st->second, rec.class_label);
            v.top1 = *v.gt_rank == 1 && v.gt_known;
            v.top5 = *v.gt_rank <= 5 && v.gt_known;
            cls1 += *v.gt_rank == 1;
            cls5 += *v.gt_rank <= 5;
        }
        known += v.gt_known;
        top1 += v.top1;
        top5 += v.top5;
        rep.verdicts.push_back(std::move(v));
    }
    rep.n = rep.verdicts.size();
    const double n = rep.n ? double(rep.n) : 1.0;
    rep.gt_known_loc = double(known) / n;
    if (scores) {
        rep.top1_loc = double(top1) / n;
        rep.top5_loc = double(top5) / n;
        rep.top1_cls = double(cls1) / n;
        rep.top5_cls = double(cls5) / n;
    }
    return rep;
}

std::uint64_t params_checksum(const RegressorParamsd& params)
{
    // FNV-1a over the raw parameter bytes.
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](const auto& m) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
        for (std::size_t i = 0; i < std::size_t(m.size()) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    mix(params.W1);
    mix(params.b1);
    mix(params.W2);
    mix(params.b2);
    return h;
}

EvalReport transfer_eval(const RegressorParamsd& params, const PooledFeatures& pooled, const Manifest& manifest,
                         Split split)
{
    if (pooled.dim() != params.input_dim())
        throw DimensionError("transfer_eval: localizer expects " + std::to_string(params.input_dim()) +
                             "-dim features but the target dataset has " + std::to_string(pooled.dim()) +
                             " (different backbone?)");
    const auto before = params_checksum(params);
    const auto preds = predict_boxes(params, pooled, manifest, split);
    if (params_checksum(params) != before)
        throw Error("transfer_eval: parameters changed during evaluation");
    return evaluate_run(preds, nullptr, manifest, split);
}

std::string report_json(const EvalReport& r)
{
    using nlohmann::json;
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j{{"n", r.n},
           {"skipped_no_gt", r.skipped_no_gt},
           {"gt_known_loc", r.gt_known_loc},
           {"top1_loc", opt(r.top1_loc)},
           {"top5_loc", opt(r.top5_loc)},
           {"top1_cls", opt(r.top1_cls)},
           {"top5_cls", opt(r.top5_cls)}};
    return j.dump(2);
}

std::string report_table(const EvalReport& r)
{
    std::ostringstream out;
    char line[96];
    const auto row = [&](const char* name, const std::optional<double>& v) {
        if (v)
            std::snprintf(line, sizeof line, "%-14s %8.2f%%\n", name, 100.0 * *v);
        else
            std::snprintf(line, sizeof line, "%-14s %9s\n", name, "n/a");
        out << line;
    };
    std::snprintf(line, sizeof line, "%-14s %9zu\n", "images", r.n);
    out << line;
    std::snprintf(line, sizeof line, "%-14s %9zu\n", "skipped (no gt)", r.skipped_no_gt);
    out << line;
    row("GT-Known Loc", r.gt_known_loc);
    row("Top-1 Loc", r.top1_loc);
    row("Top-5 Loc", r.top5_loc);
    row("Top-1 Cls", r.top1_cls);
    row("Top-5 Cls", r.top5_cls);
    return out.str();
}

void write_verdicts_csv(const EvalReport& r, std::ostream& out)
{
    out << "image_id,iou,cls_rank_of_gt,gt_known,top1,top5\n";
    char buf[32];
    for (const auto& v : r.verdicts) {
        std::snprintf(buf, sizeof buf, "%.6f", v.iou);
        out << v.image_id << ',' << buf << ',';
        if (v.gt_rank)
            out << *v.gt_rank;
        out << ',' << int(v.gt_known) << ',' << int(v.top1) << ',' << int(v.top5) << '\n';
    }
}

} // namespace psol
