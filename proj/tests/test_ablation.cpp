#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cnnf/ablation.hpp"
#include "cnnf/viz.hpp"
#include "support/testutil.hpp"

using namespace cnnf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("cnnf_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

VariantResult make_result(const std::string& id, double final_acc, double best_acc,
                          std::int64_t params, double seconds) {
    VariantResult r;
    r.id = id;
    r.final_acc = final_acc;
    r.best_acc = best_acc;
    r.param_count = params;
    r.seconds = seconds;
    return r;
}

}  // namespace

TEST_CASE("variant catalogue covers the component study") {
    const auto& ids = all_variant_ids();
    const std::vector<std::string> expect{"full", "no_batchnorm", "no_dropout", "two_blocks",
                                          "baseline"};
    CHECK(ids == expect);
    for (const auto& id : ids) {
        VariantSpec spec = variant_spec(id);
        CHECK(spec.id == id);
        CHECK(!spec.description.empty());
    }

    ModelConfig full = variant_spec("full").config;
    REQUIRE(full.blocks.size() == 3);
    CHECK(full.blocks[0].convs == 2);
    CHECK(full.blocks[0].filters == 64);
    CHECK(full.blocks[2].filters == 256);
    CHECK(full.use_batchnorm);
    CHECK(full.conv_dropout == 0.25);
    CHECK(full.fc_dropout == 0.5);

    ModelConfig nb = variant_spec("no_batchnorm").config;
    CHECK(!nb.use_batchnorm);
    CHECK(nb.conv_dropout == 0.25);  // only batch norm changes

    ModelConfig nd = variant_spec("no_dropout").config;
    CHECK(nd.use_batchnorm);
    CHECK(nd.conv_dropout == 0.0);
    CHECK(nd.fc_dropout == 0.0);

    ModelConfig tb = variant_spec("two_blocks").config;
    REQUIRE(tb.blocks.size() == 2);
    CHECK(tb.blocks[1].filters == 128);
    CHECK(tb.flattened_size() == 8192);

    ModelConfig base = variant_spec("baseline").config;
    REQUIRE(base.blocks.size() == 3);
    for (const auto& b : base.blocks) CHECK(b.convs == 1);
    CHECK(!base.use_batchnorm);
    CHECK(base.conv_dropout == 0.0);
    CHECK(base.fc_dropout == 0.0);
}

TEST_CASE("unknown variant ids raise a config error") {
    CHECK_THROWS_WITH_AS(variant_spec("bogus"), doctest::Contains("unknown variant"), ConfigError);
    CHECK_THROWS_AS(variant_spec(""), ConfigError);
}

TEST_CASE("variant models build with the expected parameter counts") {
    auto count = [](const std::string& id) {
        Model m = build_model(variant_spec(id).config, 1);
        return m.param_count();
    };
    CHECK(count("full") == 3249098);
    CHECK(count("no_batchnorm") == 3248202);
    CHECK(count("no_dropout") == 3249098);  // dropout holds no parameters
    CHECK(count("two_blocks") == 4460490);  // bigger flatten outweighs the lost block
    CHECK(count("baseline") == 2473610);
    Model tb = build_model(variant_spec("two_blocks").config, 1);
    CHECK(tb.output_shape(Shape{1, 3, 32, 32}) == Shape{1, 10});
}

TEST_CASE("ablation runner averages seeds and isolates failing variants") {
    TempDir dir("ablate");
    Dataset train = synthesize_dataset(8, 21);
    Dataset test = synthesize_dataset(8, 22, Split::kTest);
    TrainConfig base;
    base.epochs = 1;
    base.batch_size = 8;
    base.seed = 100;
    base.out_dir = dir.path.string();

    auto results = run_ablation(base, {"baseline", "bogus"}, 2, train, test);
    REQUIRE(results.size() == 2);

    const VariantResult& ok = results[0];
    CHECK(ok.id == "baseline");
    CHECK(!ok.failed);
    CHECK(ok.param_count == 2473610);
    CHECK(ok.metrics.size() == 1);

    auto seed0 = read_metrics_csv((dir.path / "baseline_seed0" / "metrics.csv").string());
    auto seed1 = read_metrics_csv((dir.path / "baseline_seed1" / "metrics.csv").string());
    REQUIRE(seed0.records.size() == 1);
    REQUIRE(seed1.records.size() == 1);
    const double mean_final = (seed0.records.back().test_acc + seed1.records.back().test_acc) / 2.0;
    CHECK(std::abs(ok.final_acc - mean_final) <= 1e-9);
    CHECK(ok.best_acc >= ok.final_acc - 1e-12);

    const VariantResult& bad = results[1];
    CHECK(bad.id == "bogus");
    CHECK(bad.failed);
    CHECK(bad.error.find("unknown variant") != std::string::npos);
}

TEST_CASE("ablation runner rejects empty requests") {
    Dataset train = synthesize_dataset(4, 1);
    Dataset test = synthesize_dataset(4, 2, Split::kTest);
    TrainConfig base;
    CHECK_THROWS_AS(run_ablation(base, {}, 1, train, test), ValueError);
    CHECK_THROWS_AS(run_ablation(base, {"full"}, 0, train, test), ValueError);
}

TEST_CASE("report csv sorts by accuracy and anchors deltas at full") {
    std::vector<VariantResult> results;
    results.push_back(make_result("full", 0.85, 0.86, 100, 1.5));
    results.push_back(make_result("no_dropout", 0.88, 0.89, 100, 1.25));
    VariantResult failed = make_result("two_blocks", 0.0, 0.0, 0, 0.0);
    failed.failed = true;
    failed.error = "boom";
    results.push_back(failed);
    results.push_back(make_result("baseline", 0.70, 0.72, 50, 0.5));

    const std::string csv = render_report_csv(results);
    const std::string expect =
        "variant,final_acc,best_acc,delta_vs_full,params,seconds\n"
        "no_dropout,0.880000,0.890000,0.030000,100,1.250\n"
        "full,0.850000,0.860000,0.000000,100,1.500\n"
        "baseline,0.700000,0.720000,-0.150000,50,0.500\n";
    CHECK(csv == expect);

    const std::string text = render_report_text(results);
    CHECK(text.find("two_blocks: FAILED (boom)") != std::string::npos);
    CHECK(text.find("no_dropout") < text.find("baseline"));  // same ordering
}

TEST_CASE("report without full leaves the delta column blank") {
    std::vector<VariantResult> results;
    results.push_back(make_result("baseline", 0.70, 0.72, 50, 0.5));
    const std::string csv = render_report_csv(results);
    CHECK(csv.find("baseline,0.700000,0.720000,,50,0.500") != std::string::npos);
}

TEST_CASE("reports with no completed variants are an error") {
    VariantResult failed = make_result("full", 0.0, 0.0, 0, 0.0);
    failed.failed = true;
    std::vector<VariantResult> results{failed};
    CHECK_THROWS_AS(render_report_csv(results), ValueError);
    CHECK_THROWS_AS(render_report_text(results), ValueError);
}
