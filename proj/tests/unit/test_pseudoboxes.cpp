#include "psol/pseudoboxes.hpp"

#include "fixture.hpp"

#include <doctest.h>

#include <fstream>

using namespace psol;

namespace {

struct Written {
    testing::Fixture fx;
    std::filesystem::path dir;
};

const Written& written()
{
    static const Written w = [] {
        Written out{testing::make_fixture({}), testing::scratch_dir("pseudoboxes")};
        testing::write_fixture(out.fx, out.dir);
        return out;
    }();
    return w;
}

double share_above(const std::vector<PseudoAnnotation>& anns, const testing::Fixture& fx, double t)
{
    int ok = 0;
    for (const auto& a : anns)
        ok += iou(a.box, fx.planted.at(a.image_id)) >= t;
    return double(ok) / double(anns.size());
}

} // namespace

TEST_CASE("DDT recovers planted objects")
{
    const auto& [fx, dir] = written();
    for (Split split : {Split::train, Split::test}) {
        PseudoBoxOptions opts;
        opts.target_split = split;
        opts.threads = 3;
        const auto anns = generate_pseudo_boxes(fx.manifest, dir / "features", opts);
        CHECK(anns.size() == fx.manifest.split(split).size());
        CHECK(share_above(anns, fx, 0.8) >= 0.95);
        CHECK_NOTHROW(check_against_manifest(anns, fx.manifest));
        for (std::size_t i = 1; i < anns.size(); ++i) {
            const auto& p = fx.manifest.at(anns[i - 1].image_id);
            const auto& q = fx.manifest.at(anns[i].image_id);
            CHECK(std::pair(p.class_label, p.image_id) < std::pair(q.class_label, q.image_id));
        }
    }
}

TEST_CASE("output does not depend on the thread count")
{
    const auto& [fx, dir] = written();
    PseudoBoxOptions one, many;
    many.threads = 8;
    CHECK(generate_pseudo_boxes(fx.manifest, dir / "features", one) ==
          generate_pseudo_boxes(fx.manifest, dir / "features", many));
}

TEST_CASE("CAM boxes need classifier weights")
{
    const auto& [fx, dir] = written();
    PseudoBoxOptions opts;
    opts.method = BoxMethod::cam;
    CHECK_THROWS_AS(generate_pseudo_boxes(fx.manifest, dir / "features", opts), ConfigError);
    const auto anns = generate_pseudo_boxes(fx.manifest, dir / "features", opts, &fx.weights);
    CHECK(anns.size() == fx.manifest.split(Split::train).size());
    for (const auto& a : anns) {
        CHECK(a.source != BoxSource::ddt);
        CHECK(box_within(a.box, fx.manifest.at(a.image_id).orig_width, fx.manifest.at(a.image_id).orig_height));
    }
}

TEST_CASE("CAM thresholds the min-max scaled map")
{
    // Column 0 holds the object; the 0.15 cells sit just under the 0.2 cut.
    FeatureMap fm("t", 3, 3, 1);
    fm.values << 1.0f, 0.15f, 0.0f, 0.9f, 0.15f, 0.0f, 0.25f, 0.0f, 0.0f;
    ClassifierWeights w(2, 1);
    w << -1.0f, 1.0f;
    ImageRecord rec{"t", 1, 448, 448, 448, std::nullopt, Split::train};
    const ImageRecord* targets[] = {&rec};
    const FeatureMap* maps[] = {&fm};
    PseudoBoxOptions opts;
    opts.method = BoxMethod::cam;
    const auto anns = class_pseudo_boxes({}, targets, maps, opts, &w);
    REQUIRE(anns.size() == 1);
    CHECK(anns[0].source == BoxSource::cam);
    CHECK(anns[0].box.x == 0);
    CHECK(anns[0].box.y == 0);
    // the object column stays left of the 0.15 column's centre
    CHECK(anns[0].box.w < 224);
    CHECK(anns[0].box.h > 224);

    // a constant map has no contrast and falls back
    fm.values.setConstant(0.5f);
    CHECK(class_pseudo_boxes({}, targets, maps, opts, &w)[0].source == BoxSource::fullimage_fallback);
}

TEST_CASE("a map with no positive response falls back to the full image")
{
    // Fit maps whose mean is the zero vector; a target equal to the mean
    // projects to zero everywhere.
    FeatureMap a("a", 2, 2, 2), b("b", 2, 2, 2);
    a.values << 1, 0, -1, 0, 2, 0, -2, 0;
    b.values = -a.values;
    b.values.col(1).setConstant(0.1f);
    a.values.col(1).setConstant(-0.1f);
    const std::vector<FeatureMap> fit{a, b};
    FeatureMap flat("t", 2, 2, 2);
    flat.values.setZero();
    ImageRecord rec{"t", 0, 320, 240, 448, std::nullopt, Split::train};
    const ImageRecord* targets[] = {&rec};
    const FeatureMap* maps[] = {&flat};
    const auto anns = class_pseudo_boxes(fit, targets, maps, {});
    REQUIRE(anns.size() == 1);
    CHECK(anns[0].source == BoxSource::fullimage_fallback);
    CHECK(anns[0].box == BoxXYWH{0, 0, 320, 240});

    CHECK_FALSE(box_from_heatmap(HeatMap::Constant(3, 3, -1), rec).has_value());
    HeatMap one = HeatMap::Constant(4, 4, -1);
    one(0, 0) = 1;
    const auto box = box_from_heatmap(one, rec);
    REQUIRE(box.has_value());
    CHECK(box_within(*box, 320, 240));
    CHECK(box->x == 0);
    CHECK(box->y == 0);
}

TEST_CASE("missing inputs")
{
    const auto& [fx, dir] = written();
    const auto empty = testing::scratch_dir("pseudoboxes_empty");
    CHECK_THROWS_AS(generate_pseudo_boxes(fx.manifest, empty, {}), DataError);

    // a manifest entry without a feature map
    auto records = fx.manifest.records();
    records.push_back({"ghost", 0, 300, 300, 448, std::nullopt, Split::train});
    const Manifest extended(records);
    CHECK_THROWS_WITH_AS(generate_pseudo_boxes(extended, dir / "features", {}), doctest::Contains("ghost"),
                         DataError);
}

TEST_CASE("annotation files round-trip")
{
    const auto dir = testing::scratch_dir("pseudoboxes_io");
    std::vector<PseudoAnnotation> anns;
    for (int i = 0; i < 1000; ++i) {
        const auto src = i % 3 == 0 ? BoxSource::ddt : i % 3 == 1 ? BoxSource::cam : BoxSource::fullimage_fallback;
        anns.push_back({"img_" + std::to_string(i), {i * 0.125, i / 7.0, 1 + i % 13 / 3.0, 2 + i * 1e-3}, src});
    }
    write_pseudo_annotations(anns, dir / "a.jsonl");
    CHECK(read_pseudo_annotations(dir / "a.jsonl") == anns);

    std::ifstream in(dir / "a.jsonl");
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    std::getline(in, line);
    CHECK(line.find("\"fullimage-fallback\"") != std::string::npos);

    std::ofstream(dir / "dup.jsonl") << R"({"image_id":"x","box":{"x":0,"y":0,"w":1,"h":1},"source":"ddt"})" << '\n'
                                     << R"({"image_id":"x","box":{"x":0,"y":0,"w":1,"h":1},"source":"ddt"})" << '\n';
    CHECK_THROWS_AS(read_pseudo_annotations(dir / "dup.jsonl"), ValidationError);
    std::ofstream(dir / "bad.jsonl") << R"({"image_id":"x","box":{"x":0,"y":0,"w":1},"source":"ddt"})" << '\n';
    CHECK_THROWS_AS(read_pseudo_annotations(dir / "bad.jsonl"), FormatError);
    std::ofstream(dir / "src.jsonl") << R"({"image_id":"x","box":{"x":0,"y":0,"w":1,"h":1},"source":"magic"})" << '\n';
    CHECK_THROWS_AS(read_pseudo_annotations(dir / "src.jsonl"), FormatError);
    CHECK_THROWS_AS(read_pseudo_annotations(dir / "absent.jsonl"), DataError);
}

TEST_CASE("annotations are checked against the manifest")
{
    const auto& fx = written().fx;
    const auto& rec = fx.manifest.records().front();
    std::vector<PseudoAnnotation> ok{{rec.image_id, {0, 0, double(rec.orig_width), double(rec.orig_height)}}};
    CHECK_NOTHROW(check_against_manifest(ok, fx.manifest));
    auto outside = ok;
    outside[0].box.w += 1;
    CHECK_THROWS_AS(check_against_manifest(outside, fx.manifest), ValidationError);
    std::vector<PseudoAnnotation> unknown{{"nobody", {0, 0, 1, 1}}};
    CHECK_THROWS_AS(check_against_manifest(unknown, fx.manifest), ValidationError);
}

TEST_CASE("method and source names")
{
    CHECK(std::string(to_string(BoxSource::fullimage_fallback)) == "fullimage-fallback");
    CHECK(box_method_from_string("cam") == BoxMethod::cam);
    CHECK_THROWS_AS(box_method_from_string("grabcut"), ConfigError);
}
