#include "psol/train.hpp"

#include "fixture.hpp"

#include <doctest.h>

#include <fstream>
#include <numeric>
#include <random>

using namespace psol;
using Mat = Eigen::MatrixXd;

namespace {

const testing::Fixture& fixture()
{
    static const auto fx = testing::make_fixture({});
    return fx;
}

TrainConfig fixture_config()
{
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.epochs = 150;
    cfg.hidden = 128;
    cfg.seed = 1;
    return cfg;
}

std::vector<PseudoAnnotation> planted_annotations(const testing::Fixture& fx)
{
    std::vector<PseudoAnnotation> anns;
    for (const auto* r : fx.manifest.split(Split::train))
        anns.push_back({r->image_id, fx.planted.at(r->image_id), BoxSource::ddt});
    return anns;
}

double held_out_gt_known(const RegressorParamsd& params, const testing::Fixture& fx)
{
    const auto preds = predict_boxes(params, fx.pooled, fx.manifest, Split::test);
    int ok = 0;
    for (const auto& p : preds)
        ok += iou(p.box, *fx.manifest.at(p.image_id).gt_box) >= 0.5;
    return double(ok) / double(preds.size());
}

double accuracy(const ClassifierParamsd& p, const Mat& x, const std::vector<int>& labels)
{
    const Mat logits = cls_logits(p, x);
    int ok = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        Eigen::Index arg;
        logits.col(j).maxCoeff(&arg);
        ok += arg == labels[std::size_t(j)];
    }
    return double(ok) / double(x.cols());
}

} // namespace

TEST_CASE("regressor learns planted boxes")
{
    const auto& fx = fixture();
    const auto run = train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, fixture_config());
    CHECK(run.loss.size() == 150);
    CHECK(run.loss.back() < run.loss.front());
    CHECK(held_out_gt_known(run.params, fx) >= 0.95);
}

TEST_CASE("zero epochs returns the seeded initialization")
{
    const auto& fx = fixture();
    auto cfg = fixture_config();
    cfg.epochs = 0;
    const auto run = train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, cfg);
    const auto init = initial_regressor(fx.options.d, cfg);
    CHECK(run.loss.empty());
    CHECK(run.params.W1 == init.W1);
    CHECK(run.params.W2 == init.W2);
    CHECK(run.params.b1 == init.b1);
    CHECK(run.params.b2 == init.b2);
}

TEST_CASE("full-batch plain gradient descent lowers the loss every epoch")
{
    const auto& fx = fixture();
    auto cfg = fixture_config();
    cfg.batch_size = 1 << 20;
    cfg.momentum = 0;
    cfg.weight_decay = 0;
    cfg.lr = 0.05;
    cfg.epochs = 40;
    const auto run = train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, cfg);
    for (std::size_t e = 1; e < run.loss.size(); ++e)
        CHECK(run.loss[e] <= run.loss[e - 1]);
}

TEST_CASE("corrupting 30 percent of the boxes costs at most 10 points")
{
    const auto& fx = fixture();
    const auto clean = planted_annotations(fx);
    auto noisy = clean;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::size_t> idx(noisy.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size() * 3 / 10; ++k) {
        auto& a = noisy[idx[k]];
        const auto& rec = fx.manifest.at(a.image_id);
        const double w = 1 + u(rng) * (rec.orig_width - 1), h = 1 + u(rng) * (rec.orig_height - 1);
        a.box = {u(rng) * (rec.orig_width - w), u(rng) * (rec.orig_height - h), w, h};
    }
    const auto cfg = fixture_config();
    const double a = held_out_gt_known(train_regressor(fx.pooled, clean, fx.manifest, cfg).params, fx);
    const double b = held_out_gt_known(train_regressor(fx.pooled, noisy, fx.manifest, cfg).params, fx);
    MESSAGE("clean " << a << " noisy " << b);
    CHECK(a - b <= 0.10);
}

TEST_CASE("training is deterministic for a seed")
{
    const auto& fx = fixture();
    auto cfg = fixture_config();
    cfg.epochs = 5;
    const auto a = train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, cfg);
    const auto b = train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, cfg);
    CHECK(a.params.W1 == b.params.W1);
    CHECK(a.params.b2 == b.params.b2);
    CHECK(a.loss == b.loss);
    cfg.seed = 2;
    const auto c = train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, cfg);
    CHECK(c.params.W1 != a.params.W1);
}

TEST_CASE("classifier separates the fixture classes")
{
    const auto& fx = fixture();
    auto cfg = fixture_config();
    cfg.epochs = 30;
    const auto run = train_classifier(fx.pooled, fx.manifest, fx.options.classes, cfg);
    const auto test = classification_set(fx.pooled, fx.manifest, Split::test);
    CHECK(accuracy(run.params, test.x, test.labels) == 1.0);
}

TEST_CASE("classifier on random labels stays at chance")
{
    constexpr int classes = 5, d = 32;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    const auto sample = [&](int count, Mat& x, std::vector<int>& labels) {
        x.resize(d, count);
        for (auto& v : x.reshaped())
            v = n(rng);
        labels.resize(std::size_t(count));
        for (auto& l : labels)
            l = int(rng() % classes);
    };
    Mat xtr, xte;
    std::vector<int> ltr, lte;
    sample(1000, xtr, ltr);
    sample(4000, xte, lte);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.epochs = 20;
    const auto run = train_classifier(xtr, ltr, classes, cfg);
    CHECK(std::abs(accuracy(run.params, xte, lte) - 1.0 / classes) <= 0.05);
}

TEST_CASE("joint training with lambda zero")
{
    const auto& fx = fixture();
    const auto set = regression_set(fx.pooled, planted_annotations(fx), fx.manifest);
    std::vector<int> labels;
    for (const auto& id : set.ids)
        labels.push_back(fx.manifest.at(id).class_label);
    auto cfg = fixture_config();
    cfg.epochs = 4;
    cfg.lambda = 0;
    const auto joint = train_joint(set.x, labels, fx.options.classes, set.targets, cfg);
    const auto cls = train_classifier(set.x, labels, fx.options.classes, cfg);
    CHECK(joint.cls.Wc == cls.params.Wc);
    CHECK(joint.cls.bc == cls.params.bc);
    CHECK(joint.cls_loss == cls.loss);

    // the regressor only sees weight decay
    auto decayed = initial_regressor(fx.options.d, cfg);
    const int batches = int((set.x.cols() + cfg.batch_size - 1) / cfg.batch_size);
    RegressorGrads<double> zero{Mat::Zero(decayed.W1.rows(), decayed.W1.cols()), Mat::Zero(4, cfg.hidden),
                                Eigen::VectorXd::Zero(cfg.hidden), Eigen::VectorXd::Zero(4)};
    for (int e = 0; e < cfg.epochs; ++e)
        for (int b = 0; b < batches; ++b)
            sgd_step(decayed, zero, SgdRates{cfg.lr_at(e), cfg.momentum, cfg.weight_decay});
    CHECK((joint.reg.W1 - decayed.W1).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((joint.reg.b2 - decayed.b2).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("joint training with lambda one tracks the separate heads")
{
    const auto& fx = fixture();
    const auto anns = planted_annotations(fx);
    const auto cfg = fixture_config();
    const auto joint = train_joint(fx.pooled, anns, fx.manifest, fx.options.classes, cfg);
    const auto reg = train_regressor(fx.pooled, anns, fx.manifest, cfg);
    const auto cls = train_classifier(fx.pooled, fx.manifest, fx.options.classes, cfg);
    CHECK(std::abs(held_out_gt_known(joint.reg, fx) - held_out_gt_known(reg.params, fx)) <= 0.02);
    const auto test = classification_set(fx.pooled, fx.manifest, Split::test);
    CHECK(std::abs(accuracy(joint.cls, test.x, test.labels) - accuracy(cls.params, test.x, test.labels)) <= 0.02);
    REQUIRE(joint.loss.size() == joint.reg_loss.size());
    for (std::size_t e = 0; e < joint.loss.size(); ++e)
        CHECK(joint.loss[e] == doctest::Approx(joint.cls_loss[e] + joint.reg_loss[e]));
}

TEST_CASE("predict with a zero network gives centred half-size boxes")
{
    const auto& fx = fixture();
    RegressorParamsd zero(fx.options.d, 8);
    const auto preds = predict_boxes(zero, fx.pooled, fx.manifest, Split::test);
    REQUIRE(preds.size() == fx.manifest.split(Split::test).size());
    for (const auto& p : preds) {
        const auto& r = fx.manifest.at(p.image_id);
        CHECK(p.box == BoxXYWH{r.orig_width / 2.0, r.orig_height / 2.0, r.orig_width / 2.0, r.orig_height / 2.0});
    }
}

TEST_CASE("invalid settings and diverging runs")
{
    const auto& fx = fixture();
    auto cfg = fixture_config();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train_regressor(fx.pooled, planted_annotations(fx), fx.manifest, cfg), ConfigError);
    cfg = fixture_config();
    cfg.lr = 1e200;
    cfg.epochs = 3;
    CHECK_THROWS_AS(train_classifier(fx.pooled, fx.manifest, fx.options.classes, cfg), NumericError);

    std::vector<PseudoAnnotation> unknown{{"nope", {0, 0, 1, 1}, BoxSource::ddt}};
    CHECK_THROWS_AS(train_regressor(fx.pooled, unknown, fx.manifest, fixture_config()), DataError);
}

TEST_CASE("prediction and loss files")
{
    const auto dir = testing::scratch_dir("train_files");
    std::vector<PredictedBox> preds{{"a", {1, 2, 3, 4}}, {"b", {0.5, 0.25, 10, 20}}};
    write_predictions(preds, dir / "p.jsonl");
    const auto back = read_predictions(dir / "p.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].image_id == "b");
    CHECK(back[1].box == preds[1].box);

    const std::vector<double> loss{0.5, 0.25, 0.125};
    write_loss_csv(loss, dir / "loss.csv");
    std::ifstream in(dir / "loss.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line))
        lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "epoch,split,loss");
    CHECK(lines[1].rfind("1,train,", 0) == 0);
}
