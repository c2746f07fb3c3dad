#include "psol/cli.hpp"

#include "psol/checkpoint.hpp"
#include "psol/config.hpp"
#include "psol/error.hpp"
#include "psol/eval.hpp"
#include "psol/pseudoboxes.hpp"
#include "psol/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>

namespace psol {

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config;
    std::string output_dir;
    int threads = 0;
    std::string method;
    std::string split;
    std::string out_file;
    int epochs = -1;
    long long seed = -1;
    double lr = 0;
    int batch_size = 0;
    std::string pseudo_boxes;
    std::string checkpoint;
    std::string predictions;
    std::string scores;
};

void require_path(const fs::path& p, const char* what)
{
    if (p.empty())
        throw ConfigError(std::string("config does not set ") + what);
    if (!fs::exists(p))
        throw ConfigError(std::string(what) + " '" + p.string() + "' does not exist");
}

RunConfig resolve(const Overrides& o)
{
    RunConfig cfg = load_run_config(o.config);
    if (!o.output_dir.empty())
        cfg.output_dir = o.output_dir;
    if (o.threads > 0)
        cfg.threads = o.threads;
    if (!o.method.empty())
        cfg.method = box_method_from_string(o.method);
    if (!o.split.empty()) {
        try {
            cfg.split = cfg.eval_split = split_from_string(o.split);
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        }
    }
    if (o.epochs >= 0)
        cfg.train.epochs = o.epochs;
    if (o.seed >= 0)
        cfg.train.seed = std::uint64_t(o.seed);
    if (o.lr > 0)
        cfg.train.lr = o.lr;
    if (o.batch_size > 0)
        cfg.train.batch_size = o.batch_size;
    if (!o.pseudo_boxes.empty())
        cfg.pseudo_boxes = o.pseudo_boxes;
    fs::create_directories(cfg.output_dir);
    return cfg;
}

fs::path pseudo_box_path(const RunConfig& cfg)
{
    return cfg.pseudo_boxes ? *cfg.pseudo_boxes : cfg.output_dir / "pseudo_boxes.jsonl";
}

int cmd_generate_boxes(const Overrides& o, std::ostream& out)
{
    const RunConfig cfg = resolve(o);
    require_path(cfg.manifest, "manifest");
    require_path(cfg.feature_dir, "feature_dir");
    std::optional<ClassifierWeights> weights;
    if (cfg.method == BoxMethod::cam) {
        if (!cfg.classifier_weights)
            throw ConfigError("method cam needs classifier_weights in the config");
        require_path(*cfg.classifier_weights, "classifier_weights");
        weights = read_classifier_weights(*cfg.classifier_weights);
    }
    const Manifest manifest = load_manifest(cfg.manifest);
    PseudoBoxOptions opts;
    opts.method = cfg.method;
    opts.target_split = cfg.split;
    opts.cam_threshold = cfg.cam_threshold;
    opts.threads = cfg.threads;
    const auto anns = generate_pseudo_boxes(manifest, cfg.feature_dir, opts, weights ? &*weights : nullptr);

    const fs::path dest = !o.out_file.empty()          ? fs::path(o.out_file)
                          : cfg.split == Split::train ? pseudo_box_path(cfg)
                                                      : cfg.output_dir / "pseudo_boxes_test.jsonl";
    write_pseudo_annotations(anns, dest);

    std::size_t fallback = 0;
    for (const auto& a : anns)
        fallback += a.source == BoxSource::fullimage_fallback;
    const double rate = anns.empty() ? 0.0 : double(fallback) / double(anns.size());
    nlohmann::json summary{{"annotations", anns.size()},
                           {"fallback", fallback},
                           {"fallback_rate", rate},
                           {"method", to_string(cfg.method)},
                           {"split", to_string(cfg.split)},
                           {"output", dest.string()}};
    std::ofstream(cfg.output_dir / "generate_summary.json") << summary.dump(2) << '\n';
    out << "wrote " << anns.size() << " boxes to " << dest.string() << " (fallback " << fallback << ", rate "
        << rate << ")\n";
    return 0;
}

enum class Heads { reg, cls, joint };

int cmd_train(const Overrides& o, Heads heads, std::ostream& out)
{
    RunConfig cfg = resolve(o);
    require_path(cfg.manifest, "manifest");
    require_path(cfg.pooled_features, "pooled_features");
    if (heads != Heads::reg)
        cfg.train.lr_policy = cfg.explicit_lr_policy.value_or(LrPolicy::step_decay);

    const Manifest manifest = load_manifest(cfg.manifest);
    const PooledFeatures pooled = read_pooled_features(cfg.pooled_features);
    const int classes = cfg.num_classes.value_or(manifest.num_classes());

    std::vector<PseudoAnnotation> anns;
    if (heads != Heads::cls) {
        const auto boxes = pseudo_box_path(cfg);
        require_path(boxes, "pseudo_boxes");
        anns = read_pseudo_annotations(boxes);
        check_against_manifest(anns, manifest);
    }

    Checkpoint ckpt;
    ckpt.config = cfg.train;
    ckpt.epoch = cfg.train.epochs;
    std::vector<double> loss;
    std::string stem;
    switch (heads) {
    case Heads::reg: {
        auto run = train_regressor(pooled, anns, manifest, cfg.train);
        ckpt.reg = std::move(run.params);
        loss = std::move(run.loss);
        stem = "reg";
        break;
    }
    case Heads::cls: {
        auto run = train_classifier(pooled, manifest, classes, cfg.train);
        ckpt.cls = std::move(run.params);
        loss = std::move(run.loss);
        stem = "cls";
        break;
    }
    case Heads::joint: {
        auto run = train_joint(pooled, anns, manifest, classes, cfg.train);
        ckpt.reg = std::move(run.reg);
        ckpt.cls = std::move(run.cls);
        loss = std::move(run.loss);
        stem = "joint";
        break;
    }
    }
    const auto ckpt_path = cfg.output_dir / (stem + ".ckpt");
    write_checkpoint(ckpt, ckpt_path);
    write_loss_csv(loss, cfg.output_dir / (stem + "_loss.csv"));
    out << "wrote " << ckpt_path.string() << " after " << cfg.train.epochs << " epochs";
    if (!loss.empty())
        out << " (final loss " << loss.back() << ")";
    out << '\n';
    return 0;
}

int cmd_predict(const Overrides& o, std::ostream& out)
{
    const RunConfig cfg = resolve(o);
    require_path(cfg.manifest, "manifest");
    require_path(cfg.pooled_features, "pooled_features");
    if (o.checkpoint.empty())
        throw ConfigError("predict needs --checkpoint");
    require_path(o.checkpoint, "checkpoint");
    const Checkpoint ckpt = read_checkpoint(o.checkpoint);
    const Manifest manifest = load_manifest(cfg.manifest);
    const PooledFeatures pooled = read_pooled_features(cfg.pooled_features);
    if (ckpt.reg) {
        const auto preds = predict_boxes(*ckpt.reg, pooled, manifest, cfg.eval_split);
        write_predictions(preds, cfg.output_dir / "predictions.jsonl");
        out << "wrote " << preds.size() << " predictions\n";
    }
    if (ckpt.cls) {
        const auto scores = classify(*ckpt.cls, pooled, manifest, cfg.eval_split);
        write_classifier_outputs(scores, cfg.output_dir / "scores.jsonl");
        out << "wrote " << scores.size() << " classifier outputs\n";
    }
    return 0;
}

void emit_report(const EvalReport& rep, const fs::path& dir, const std::string& stem, std::ostream& out)
{
    std::ofstream(dir / (stem + ".json")) << report_json(rep) << '\n';
    const auto table = report_table(rep);
    std::ofstream(dir / (stem + ".txt")) << table;
    std::ofstream csv(dir / (stem == "report" ? "verdicts.csv" : stem + "_verdicts.csv"));
    write_verdicts_csv(rep, csv);
    out << table;
}

int cmd_evaluate(const Overrides& o, std::ostream& out)
{
    const RunConfig cfg = resolve(o);
    require_path(cfg.manifest, "manifest");
    const fs::path preds_path = o.predictions.empty() ? cfg.output_dir / "predictions.jsonl" : fs::path(o.predictions);
    require_path(preds_path, "predictions");
    std::optional<std::vector<ClassifierOutputs>> scores;
    if (!o.scores.empty()) {
        require_path(o.scores, "scores");
        scores = read_classifier_outputs(o.scores);
    }
    const Manifest manifest = load_manifest(cfg.manifest);
    const auto preds = read_predictions(preds_path);
    const auto rep = evaluate_run(preds, scores ? &*scores : nullptr, manifest, cfg.eval_split);
    emit_report(rep, cfg.output_dir, "report", out);
    return 0;
}

int cmd_transfer_eval(const Overrides& o, std::ostream& out)
{
    const RunConfig cfg = resolve(o);
    require_path(cfg.manifest, "manifest");
    require_path(cfg.pooled_features, "pooled_features");
    if (o.checkpoint.empty())
        throw ConfigError("transfer-eval needs --checkpoint");
    require_path(o.checkpoint, "checkpoint");
    const Checkpoint ckpt = read_checkpoint(o.checkpoint);
    if (!ckpt.reg)
        throw FormatError("checkpoint '" + o.checkpoint + "' has no regressor");
    const auto rep =
        transfer_eval(*ckpt.reg, read_pooled_features(cfg.pooled_features), load_manifest(cfg.manifest), cfg.eval_split);
    emit_report(rep, cfg.output_dir, "transfer_report", out);
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Pseudo-supervised object localization: pseudo boxes, box regression, evaluation", "psol"};
    app.set_version_flag("--version", std::string("psol ") + kVersion);
    app.require_subcommand(1);

    Overrides o;
    const auto common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config, "Run configuration (JSON)")->required();
        sub->add_option("--output-dir", o.output_dir, "Override output_dir");
        sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    };
    const auto training = [&o](CLI::App* sub) {
        sub->add_option("--epochs", o.epochs, "Override train.epochs")->check(CLI::NonNegativeNumber);
        sub->add_option("--seed", o.seed, "Override train.seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--lr", o.lr, "Override train.lr")->check(CLI::PositiveNumber);
        sub->add_option("--batch-size", o.batch_size, "Override train.batch_size")->check(CLI::PositiveNumber);
        sub->add_option("--pseudo-boxes", o.pseudo_boxes, "Pseudo-annotation file");
    };

    auto* gen = app.add_subcommand("generate-boxes", "Generate pseudo boxes with DDT or CAM");
    common(gen);
    gen->add_option("--method", o.method, "ddt or cam");
    gen->add_option("--split", o.split, "Images to box: train (default) or test");
    gen->add_option("--out", o.out_file, "Output annotation file");

    auto* treg = app.add_subcommand("train-reg", "Train the box regressor on pseudo boxes");
    auto* tcls = app.add_subcommand("train-cls", "Train the classification head");
    auto* tjoint = app.add_subcommand("train-joint", "Train both heads on a summed loss");
    for (auto* sub : {treg, tcls, tjoint}) {
        common(sub);
        training(sub);
    }

    auto* pred = app.add_subcommand("predict", "Predict boxes (and scores) with a checkpoint");
    common(pred);
    pred->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    pred->add_option("--split", o.split, "Images to predict (default test)");

    auto* eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
    common(eval);
    eval->add_option("--predictions", o.predictions, "Predictions JSON lines");
    eval->add_option("--scores", o.scores, "Classifier outputs JSON lines");
    eval->add_option("--split", o.split, "Images to evaluate (default test)");

    auto* transfer = app.add_subcommand("transfer-eval", "GT-Known of a frozen localizer on another dataset");
    common(transfer);
    transfer->add_option("--checkpoint", o.checkpoint, "Checkpoint trained on the source dataset")->required();
    transfer->add_option("--split", o.split, "Images to evaluate (default test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed())
            return cmd_generate_boxes(o, out);
        if (treg->parsed())
            return cmd_train(o, Heads::reg, out);
        if (tcls->parsed())
            return cmd_train(o, Heads::cls, out);
        if (tjoint->parsed())
            return cmd_train(o, Heads::joint, out);
        if (pred->parsed())
            return cmd_predict(o, out);
        if (eval->parsed())
            return cmd_evaluate(o, out);
        if (transfer->parsed())
            return cmd_transfer_eval(o, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 3;
    }
    return 3;
}

} // namespace psol
