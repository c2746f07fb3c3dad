#include "fixture.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>

namespace psol::testing {

namespace {

Eigen::VectorXd random_unit(int d, std::mt19937_64& rng)
{
    std::normal_distribution<double> n01;
    Eigen::VectorXd v(d);
    for (int k = 0; k < d; ++k)
        v[k] = n01(rng);
    return v.normalized();
}

} // namespace

Fixture make_fixture(const FixtureOptions& o)
{
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;

    Fixture fx;
    fx.options = o;
    fx.weights.resize(o.classes, o.d);
    std::vector<Eigen::VectorXd> direction, background;
    for (int c = 0; c < o.classes; ++c) {
        direction.push_back(random_unit(o.d, rng));
        background.push_back(o.background_offset * o.noise_sigma * random_unit(o.d, rng));
        fx.weights.row(c) = direction.back().transpose().cast<float>();
    }
    // Box embedding and class embedding for pooled features.
    Eigen::MatrixXd box_embed(o.d, 4), class_embed(o.d, o.classes);
    for (int k = 0; k < o.d; ++k) {
        for (int j = 0; j < 4; ++j)
            box_embed(k, j) = n01(rng);
        for (int c = 0; c < o.classes; ++c)
            class_embed(k, c) = n01(rng) * 0.5;
    }

    const int g = o.grid;
    const double cell = double(o.net_input) / g;
    std::vector<ImageRecord> records;
    std::vector<std::string> pooled_ids;
    std::vector<Eigen::VectorXf> pooled_cols;
    const int n_test = int(std::lround(o.images_per_class * o.test_fraction));

    for (int c = 0; c < o.classes; ++c) {
        for (int i = 0; i < o.images_per_class; ++i) {
            ImageRecord rec;
            char id[32];
            std::snprintf(id, sizeof id, "c%02d_i%04d", c, i);
            rec.image_id = id;
            rec.class_label = c;
            rec.orig_width = 300 + int(u01(rng) * 200);
            rec.orig_height = 300 + int(u01(rng) * 200);
            rec.net_input_size = o.net_input;
            rec.split = i < o.images_per_class - n_test ? Split::train : Split::test;

            const double area = o.area_min + (o.area_max - o.area_min) * u01(rng);
            const double aspect = std::exp(std::log(0.6) + (std::log(1.6) - std::log(0.6)) * u01(rng));
            int rows = int(std::lround(std::sqrt(area * g * g / aspect)));
            rows = std::clamp(rows, 3, g - 1);
            int cols = std::clamp(int(std::lround(area * g * g / rows)), 3, g - 1);
            const int r0 = int(u01(rng) * (g - rows + 1));
            const int c0 = int(u01(rng) * (g - cols + 1));

            FeatureMap fm(rec.image_id, g, g, o.d);
            for (int r = 0; r < g; ++r) {
                for (int q = 0; q < g; ++q) {
                    const bool in = r >= r0 && r < r0 + rows && q >= c0 && q < c0 + cols;
                    for (int k = 0; k < o.d; ++k) {
                        double v = background[std::size_t(c)][k] + o.noise_sigma * n01(rng);
                        if (in)
                            v += o.shift_sigma * o.noise_sigma * direction[std::size_t(c)][k];
                        fm.at(r, q, k) = float(v);
                    }
                }
            }
            const BoxXYWH grid_box{double(c0), double(r0), double(cols), double(rows)};
            const BoxXYWH net_box{c0 * cell, r0 * cell, cols * cell, rows * cell};
            const BoxXYWH gt = map_box_to_image(net_box, o.net_input, rec.orig_width, rec.orig_height);
            rec.gt_box = gt;
            fx.planted[rec.image_id] = gt;
            fx.planted_grid[rec.image_id] = grid_box;

            const Eigen::Vector4d nb(gt.x / rec.orig_width, gt.y / rec.orig_height, gt.w / rec.orig_width,
                                     gt.h / rec.orig_height);
            Eigen::VectorXd pooled = box_embed * (4.0 * (nb.array() - 0.5)).matrix() + class_embed.col(c);
            for (int k = 0; k < o.d; ++k)
                pooled[k] += o.pooled_noise * n01(rng);
            pooled_ids.push_back(rec.image_id);
            pooled_cols.push_back(pooled.cast<float>());

            Eigen::VectorXf s(o.classes);
            for (int k = 0; k < o.classes; ++k)
                s[k] = float(n01(rng) + (k == c ? o.score_margin : 0.0));
            fx.scores.push_back({rec.image_id, s});

            fx.features[{rec.split, c}].push_back(std::move(fm));
            records.push_back(std::move(rec));
        }
    }
    fx.manifest = Manifest(std::move(records));
    Eigen::MatrixXf pv(o.d, Eigen::Index(pooled_cols.size()));
    for (std::size_t i = 0; i < pooled_cols.size(); ++i)
        pv.col(Eigen::Index(i)) = pooled_cols[i];
    fx.pooled = PooledFeatures(std::move(pooled_ids), std::move(pv));
    return fx;
}

void write_fixture(const Fixture& fx, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "features" / "train");
    fs::create_directories(dir / "features" / "test");
    write_manifest(fx.manifest, dir / "manifest.jsonl");
    for (const auto& [key, maps] : fx.features)
        write_tensor_file(maps, class_feature_path(dir / "features", key.first, key.second));
    write_pooled_features(fx.pooled, dir / "pooled.psoltnsr");
    write_classifier_outputs(fx.scores, dir / "scores.jsonl");
    write_classifier_weights(fx.weights, dir / "classifier_weights.psoltnsr");

    nlohmann::json cfg{{"manifest", "manifest.jsonl"},
                       {"feature_dir", "features"},
                       {"pooled_features", "pooled.psoltnsr"},
                       {"classifier_weights", "classifier_weights.psoltnsr"},
                       {"output_dir", "out"},
                       {"method", "ddt"},
                       {"train", {{"lr", 0.001}, {"momentum", 0.9}, {"weight_decay", 0.0005}, {"batch_size", 32},
                                  {"epochs", 150}, {"hidden", 128}, {"seed", 1}}}};
    std::ofstream(dir / "config.json") << cfg.dump(2) << '\n';
}

std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("psol_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace psol::testing
