#include <doctest.h>

#include <json.hpp>

#include "nucleoforge/cli.hpp"
#include "nucleoforge/metrics.hpp"
#include "test_util.hpp"

using namespace nucleoforge;
namespace fs = std::filesystem;
using nlohmann::json;
using testing::read_file;
using testing::run_tool;

namespace {

struct Fixture {
    fs::path dir;
    std::vector<SynthLabels> tiles;

    explicit Fixture(const std::string& tag, int n = 3) : dir(testing::scratch_dir(tag)) {
        tiles = testing::synth_tiles(40, n, 64, 6, 6);
        write_npy(dir / "labels.npy", testing::label_stack(tiles));
        write_npy(dir / "images.npy", testing::image_stack(tiles, 1));
    }
    ~Fixture() { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }
    fs::path out(const std::string& sub) const { return dir / sub; }
};

int cli(std::vector<std::string> args) { return run_cli(args); }

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST_CASE("deconvolve") {
    Fixture f("deconv");
    REQUIRE(cli({"--out-dir", f.p("o"), "--ppm", "deconvolve", "--images", f.p("images.npy")}) == 0);
    const auto hed = read_npy(f.out("o") / "hed.npy");
    CHECK(hed.dtype == DType::f32);
    CHECK(hed.shape == std::vector<std::size_t>{3, 64, 64, 3});
    CHECK(fs::exists(f.out("o") / "hed_h_000.ppm"));
    CHECK(fs::exists(f.out("o") / "hed_h_002.ppm"));

    // Nuclei carry more haematoxylin than background.
    const auto first = stack_item<double>(hed, 0);
    double in = 0, out = 0;
    int nin = 0, nout = 0;
    for (Index r = 0; r < 64; ++r)
        for (Index c = 0; c < 64; ++c)
            (f.tiles[0].inst(r, c) ? (in += first.at(r, c)(0), ++nin) : (out += first.at(r, c)(0), ++nout));
    CHECK(in / nin > out / nout);

    CHECK(cli({"deconvolve", "--images", f.p("missing.npy")}) != 0);
    CHECK(cli({"deconvolve", "--images", f.p("labels.npy")}) != 0);
}

TEST_CASE("targets") {
    Fixture f("targets");
    REQUIRE(cli({"--out-dir", f.p("o"), "targets", "--images", f.p("images.npy"), "--labels", f.p("labels.npy")}) == 0);
    const auto np = read_npy(f.out("o") / "np.npy");
    const auto hv = read_npy(f.out("o") / "hv.npy");
    const auto tp = read_npy(f.out("o") / "tp.npy");
    CHECK(np.shape == std::vector<std::size_t>{3, 64, 64});
    CHECK(hv.shape == std::vector<std::size_t>{3, 64, 64, 2});
    CHECK(tp.shape == std::vector<std::size_t>{3, 64, 64, 7});
    const auto hv0 = stack_item<float>(hv, 0);
    CHECK(hv0 == hv_targets<double>(f.tiles[0].inst).cast<float>());

    write_text(f.dir / "cfg.json", R"({"num_classes": 3})");
    CHECK(cli({"--config", f.p("cfg.json"), "--out-dir", f.p("o3"), "targets", "--images", f.p("images.npy"),
               "--labels", f.p("labels.npy")}) != 0);  // class ids up to 6 exceed 3

    write_npy(f.dir / "two.npy", testing::image_stack({f.tiles[0], f.tiles[1]}, 2));
    CHECK(cli({"--out-dir", f.p("bad"), "targets", "--images", f.p("two.npy"), "--labels", f.p("labels.npy")}) != 0);
    CHECK(!fs::exists(f.out("bad") / "np.npy"));
    CHECK(!fs::exists(f.out("bad") / "np.npy.partial"));
}

TEST_CASE("postprocess and evaluate round trip") {
    Fixture f("roundtrip");
    REQUIRE(cli({"--out-dir", f.p("t"), "targets", "--images", f.p("images.npy"), "--labels", f.p("labels.npy")}) == 0);
    // Binary type maps act as perfect type predictions.
    REQUIRE(cli({"--out-dir", f.p("p"), "postprocess", "--np", f.p("t/np.npy"), "--hv", f.p("t/hv.npy"), "--tp",
                 f.p("t/tp.npy")}) == 0);
    const auto inst = read_npy(f.out("p") / "inst.npy");
    CHECK(inst.dtype == DType::i32);
    for (std::size_t i = 0; i < f.tiles.size(); ++i)
        CHECK(testing::same_partition(to_field(stack_item<std::int32_t>(inst, i)), f.tiles[i].inst));
    const auto types = json::parse(read_file(f.out("p") / "types.json"));
    CHECK(types.size() == 3);

    REQUIRE(cli({"--out-dir", f.p("e"), "evaluate", "--gt", f.p("labels.npy"), "--pred-inst", f.p("p/inst.npy"),
                 "--pred-types", f.p("p/types.json")}) == 0);
    const auto report = json::parse(read_file(f.out("e") / "report.json"));
    CHECK(report.at("mpq_plus").at("per_class").size() == 6);
    CHECK(report.at("multi_r2").at("per_class").size() == 6);
    for (const auto& row : report.at("per_image")) CHECK(row.at("pq").get<double>() >= 0.99999);
    for (const auto& v : report.at("multi_r2").at("per_class")) CHECK(v.get<double>() == 1.0);
    const auto csv = read_file(f.out("e") / "report.csv");
    CHECK(csv.find("summary,") != std::string::npos);

    write_text(f.dir / "bad.json", R"({"marker_threshold": 1.5})");
    CHECK(cli({"--config", f.p("bad.json"), "--out-dir", f.p("x"), "postprocess", "--np", f.p("t/np.npy"), "--hv",
               f.p("t/hv.npy"), "--tp", f.p("t/tp.npy")}) != 0);
    CHECK(!fs::exists(f.out("x") / "inst.npy"));

    write_npy(f.dir / "two_labels.npy", testing::label_stack({f.tiles[0], f.tiles[1]}));
    CHECK(cli({"--out-dir", f.p("e2"), "evaluate", "--gt", f.p("two_labels.npy"), "--pred-inst", f.p("p/inst.npy"),
               "--pred-types", f.p("p/types.json")}) != 0);
}

TEST_CASE("postprocess of an all-zero stack") {
    Fixture f("zeros", 1);
    const std::vector<float> zeros(2 * 32 * 32 * 3, 0.0f);
    write_npy(f.dir / "np.npy", Tensor::from_values<float>({2, 32, 32}, std::span(zeros).first(2 * 32 * 32)));
    write_npy(f.dir / "hv.npy", Tensor::from_values<float>({2, 32, 32, 2}, std::span(zeros).first(2 * 32 * 32 * 2)));
    write_npy(f.dir / "tp.npy", Tensor::from_values<float>({2, 32, 32, 3}, std::span<const float>(zeros)));
    REQUIRE(cli({"--out-dir", f.p("o"), "postprocess", "--np", f.p("np.npy"), "--hv", f.p("hv.npy"), "--tp",
                 f.p("tp.npy")}) == 0);
    const auto inst = read_npy(f.out("o") / "inst.npy");
    for (auto v : inst.values<std::int32_t>()) CHECK(v == 0);
    CHECK(json::parse(read_file(f.out("o") / "types.json")) == json({{"0", json::object()}, {"1", json::object()}}));
}

TEST_CASE("evaluate with empty predictions") {
    Fixture f("emptypred");
    const std::vector<std::int32_t> zeros(3 * 64 * 64, 0);
    write_npy(f.dir / "inst.npy", Tensor::from_values<std::int32_t>({3, 64, 64}, std::span<const std::int32_t>(zeros)));
    write_text(f.dir / "types.json", "{}");
    REQUIRE(cli({"--out-dir", f.p("e"), "evaluate", "--gt", f.p("labels.npy"), "--pred-inst", f.p("inst.npy"),
                 "--pred-types", f.p("types.json")}) == 0);
    const auto report = json::parse(read_file(f.out("e") / "report.json"));
    for (const auto& row : report.at("per_image")) CHECK(row.at("pq").get<double>() == 0.0);
    CountsTable counts(3, 6);
    for (int i = 0; i < 3; ++i) {
        const auto c = count_per_class(majority_types(f.tiles[i].inst, f.tiles[i].cls, 6), 6);
        for (int k = 0; k < 6; ++k) counts(i, k) = c[k];
    }
    const auto r2 = report.at("multi_r2").at("per_class");
    int varying = 0;
    for (int k = 0; k < 6; ++k)
        if ((counts.col(k) != counts(0, k)).any()) {
            ++varying;
            CHECK(r2.at(k).get<double>() <= 0.0);
        }
    CHECK(varying > 0);
}

TEST_CASE("foldselect") {
    Fixture f("folds");
    const auto folds = f.out("folds");
    fs::create_directories(folds);
    const auto train = testing::synth_tiles(500, 4, 64, 8, 4);
    write_npy(folds / "fold_01_train_labels.npy", testing::label_stack(train));
    write_npy(folds / "fold_01_valid_labels.npy", testing::label_stack(testing::synth_tiles(900, 2, 64, 8, 4)));
    write_npy(folds / "fold_06_train_labels.npy", testing::label_stack(train));
    write_npy(folds / "fold_06_valid_labels.npy", testing::label_stack(train));
    write_npy(folds / "fold_7_train.npy", testing::label_stack(train));
    write_npy(folds / "fold_09_train_labels.npy", testing::label_stack(train));
    write_text(f.dir / "cfg.json", R"({"num_classes": 4})");

    const auto err = f.dir / "stderr.txt";
    REQUIRE(run_tool("--config " + f.p("cfg.json") + " --out-dir " + f.p("o") + " foldselect --folds " + folds.string(),
                     {}, err) == 0);
    const auto warnings = read_file(err);
    CHECK(warnings.find("fold_7_train.npy") != std::string::npos);
    CHECK(warnings.find("fold 9") != std::string::npos);
    const auto csv = read_file(f.out("o") / "ranking.csv");
    const auto second_line = csv.substr(csv.find('\n') + 1);
    CHECK(second_line.rfind("06,0,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    const auto single = f.out("single");
    fs::create_directories(single);
    fs::copy(folds / "fold_01_train_labels.npy", single);
    fs::copy(folds / "fold_01_valid_labels.npy", single);
    REQUIRE(cli({"--config", f.p("cfg.json"), "--out-dir", f.p("s"), "foldselect", "--folds", single.string()}) == 0);
    const auto one = read_file(f.out("s") / "ranking.csv");
    CHECK(std::count(one.begin(), one.end(), '\n') == 2);

    const auto none = f.out("none");
    fs::create_directories(none);
    CHECK(cli({"--out-dir", f.p("n"), "foldselect", "--folds", none.string()}) != 0);
}

TEST_CASE("loss") {
    Fixture f("loss", 1);
    std::mt19937_64 rng(77);
    const auto [p, y] = testing::random_loss_fields(rng, 8, 8, 3);
    const std::vector<double> pv(p.data(), p.data() + p.size()), yv(y.data(), y.data() + y.size());
    write_npy(f.dir / "pred.npy", Tensor::from_values<double>({1, 8, 8, 3}, std::span<const double>(pv)));
    write_npy(f.dir / "target.npy", Tensor::from_values<double>({1, 8, 8, 3}, std::span<const double>(yv)));
    const auto out = f.dir / "loss.json";
    REQUIRE(run_tool("loss --pred " + f.p("pred.npy") + " --target " + f.p("target.npy"), out) == 0);
    const auto j = json::parse(read_file(out));
    const auto lib = tp_branch_loss(p, y);
    CHECK(j.at("loss").get<double>() == doctest::Approx(lib.value).epsilon(1e-5));
    CHECK(j.at("focal").get<double>() == doctest::Approx(lib.focal).epsilon(1e-5));
    CHECK(j.at("dice").get<double>() == doctest::Approx(lib.dice).epsilon(1e-5));
    CHECK(j.at("loss").get<double>() ==
          doctest::Approx(3.0 * j.at("focal").get<double>() + j.at("dice").get<double>()).epsilon(1e-5));

    REQUIRE(run_tool("loss --pred " + f.p("target.npy") + " --target " + f.p("target.npy") + " --gamma 0 --eps 0.01",
                     out) == 0);
    const auto g0 = json::parse(read_file(out));
    CHECK(g0.at("gamma").get<double>() == 0.0);
    CHECK(g0.at("eps").get<double>() == 0.01);

    write_npy(f.dir / "onehot.npy", Tensor::from_values<double>({2, 3}, std::span<const double>(std::vector<double>{1, 0, 0, 0, 0, 1})));
    REQUIRE(run_tool("loss --pred " + f.p("onehot.npy") + " --target " + f.p("onehot.npy"), out) == 0);
    CHECK(json::parse(read_file(out)).at("loss").get<double>() < 1e-3);

    write_npy(f.dir / "small.npy", Tensor::from_values<double>({1, 3}, std::span<const double>(std::vector<double>{1, 0, 0})));
    CHECK(cli({"loss", "--pred", f.p("small.npy"), "--target", f.p("target.npy")}) != 0);
}

TEST_CASE("configuration parsing") {
    const auto bare = parse_config(json::parse(R"({"np_threshold": 0.6, "min_size": 4})"));
    CHECK(bare.postproc.np_threshold == 0.6);
    CHECK(bare.postproc.min_size == 4);
    CHECK(bare.num_classes == 6);

    const auto full = parse_config(json::parse(
        R"({"postproc": {"connectivity": 4}, "loss": {"gamma": 1.5, "eps": 0.01, "dice_squared": false},
            "num_classes": 3, "smoothing": {"foreground_only": true}})"));
    CHECK(full.postproc.connectivity == 4);
    CHECK(full.loss.gamma == 1.5);
    CHECK(full.loss.dice.eps == 0.01);
    CHECK(!full.loss.dice.squared);
    CHECK(full.num_classes == 3);
    CHECK(full.smoothing.foreground_only);

    CHECK_THROWS(parse_config(json::parse(R"({"marker_threshold": 0})")));
    CHECK_THROWS(parse_config(json::parse(R"({"unknown": 1})")));
    CHECK_THROWS(parse_config(json::parse(R"({"num_classes": 0})")));
    CHECK(parse_config(json::parse(to_json(PostprocConfig{}).dump())).postproc.min_size == 10);
}

TEST_CASE("usage errors") {
    CHECK(cli({}) != 0);
    CHECK(cli({"frobnicate"}) != 0);
    CHECK(cli({"--threads", "2", "loss", "--pred", "/nonexistent/a.npy", "--target", "/nonexistent/b.npy"}) != 0);
}
