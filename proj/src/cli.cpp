#include "nucleoforge/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "nucleoforge/array_io.hpp"
#include "nucleoforge/foldstats.hpp"
#include "nucleoforge/metrics.hpp"
#include "nucleoforge/numeric.hpp"
#include "nucleoforge/parallel.hpp"
#include "nucleoforge/targets.hpp"

namespace nucleoforge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class T>
void read_key(const json& obj, const char* key, T& out) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->template get<T>();
    } catch (const json::exception&) {
        throw ParameterError(std::string("config key '") + key + "' has the wrong type");
    }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const char* where) {
    for (const auto& [k, v] : obj.items()) {
        bool ok = false;
        for (const char* key : known) ok = ok || k == key;
        if (!ok) throw ParameterError(std::string("unknown key '") + k + "' in " + where);
    }
}

PostprocConfig parse_postproc(const json& j) {
    if (!j.is_object()) throw ParameterError("postproc config must be an object");
    reject_unknown(j, {"np_threshold", "min_size", "marker_threshold", "connectivity"}, "postproc");
    PostprocConfig cfg;
    read_key(j, "np_threshold", cfg.np_threshold);
    read_key(j, "min_size", cfg.min_size);
    read_key(j, "marker_threshold", cfg.marker_threshold);
    read_key(j, "connectivity", cfg.connectivity);
    cfg.validate();
    return cfg;
}

}  // namespace

json to_json(const PostprocConfig& cfg) {
    return {{"np_threshold", cfg.np_threshold},
            {"min_size", cfg.min_size},
            {"marker_threshold", cfg.marker_threshold},
            {"connectivity", cfg.connectivity}};
}

PipelineConfig parse_config(const json& j) {
    if (!j.is_object()) throw ParameterError("config must be a JSON object");
    PipelineConfig cfg;
    if (!j.contains("postproc") && !j.contains("num_classes") && !j.contains("loss") &&
        !j.contains("smoothing")) {
        cfg.postproc = parse_postproc(j);
        return cfg;
    }
    reject_unknown(j, {"postproc", "loss", "num_classes", "smoothing"}, "config");
    if (j.contains("postproc")) cfg.postproc = parse_postproc(j["postproc"]);
    read_key(j, "num_classes", cfg.num_classes);
    if (cfg.num_classes < 1) throw ParameterError("num_classes must be at least 1");
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        reject_unknown(l, {"gamma", "eps", "dice_squared", "dice_per_channel"}, "loss");
        read_key(l, "gamma", cfg.loss.gamma);
        read_key(l, "eps", cfg.loss.dice.eps);
        read_key(l, "dice_squared", cfg.loss.dice.squared);
        read_key(l, "dice_per_channel", cfg.loss.dice.per_channel);
        if (!(cfg.loss.gamma >= 0.0)) throw ParameterError("loss.gamma must be non-negative");
        if (!(cfg.loss.dice.eps > 0.0)) throw ParameterError("loss.eps must be positive");
    }
    if (j.contains("smoothing")) {
        const auto& s = j["smoothing"];
        reject_unknown(s, {"foreground_only"}, "smoothing");
        read_key(s, "foreground_only", cfg.smoothing.foreground_only);
    }
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw CliError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParameterError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

namespace {

/// Outputs are written under a temporary name and renamed on commit; any
/// uncommitted file is removed when the set goes out of scope.
class OutputSet {
public:
    ~OutputSet() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& [tmp, dst] : files_) fs::remove(tmp, ec);
    }

    fs::path stage(const fs::path& dst) {
        fs::path tmp = dst;
        tmp += ".partial";
        files_.emplace_back(tmp, dst);
        return tmp;
    }

    void commit() {
        for (const auto& [tmp, dst] : files_) fs::rename(tmp, dst);
        committed_ = true;
    }

private:
    std::vector<std::pair<fs::path, fs::path>> files_;
    bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CliError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw CliError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw CliError("cannot open " + path.string());
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw CliError(path.string() + " is not valid JSON: " + e.what());
    }
}

Tensor load_stack(const fs::path& path, std::size_t rank_lo, std::size_t rank_hi, const char* what) {
    if (!fs::exists(path)) throw CliError(std::string(what) + " not found: " + path.string());
    Tensor t = read_npy(path);
    if (t.rank() < rank_lo || t.rank() > rank_hi)
        throw CliError(std::string(what) + " " + path.string() + " has rank " +
                       std::to_string(t.rank()));
    return t;
}

std::string shape_string(const Tensor& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) s += (i ? "," : "") + std::to_string(t.shape[i]);
    return s + ")";
}

/// Channel k of stack item n as an integer label map; values must be integral.
LabelMap label_plane(const Tensor& t, std::size_t n, Index k) {
    const auto item = stack_item<double>(t, n);
    LabelMap out(item.height, item.width);
    const auto plane = item.channel(k);
    for (Index r = 0; r < out.rows(); ++r)
        for (Index c = 0; c < out.cols(); ++c) {
            const double v = plane(r, c);
            if (v != std::floor(v) || v < std::numeric_limits<std::int32_t>::min() ||
                v > std::numeric_limits<std::int32_t>::max())
                throw CliError("label value " + format6(v) + " is not a 32-bit integer");
            out(r, c) = static_cast<std::int32_t>(v);
        }
    return out;
}

void require_labels(const Tensor& labels) {
    if (labels.rank() != 4 || labels.shape[3] != 2)
        throw CliError("labels must be N×H×W×2 (instance, class), got " + shape_string(labels));
}

struct Globals {
    std::optional<unsigned> threads;
    std::string config;
    std::string out_dir = ".";
    bool ppm = false;
};

unsigned resolve_threads(const Globals& g) {
    if (g.threads) return std::max(1u, *g.threads);
    if (const char* env = std::getenv("NUCLEOFORGE_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring invalid NUCLEOFORGE_THREADS='" << env << "'\n";
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

PipelineConfig resolve_config(const Globals& g) {
    return g.config.empty() ? PipelineConfig{} : load_config(g.config);
}

fs::path out_path(const Globals& g, const std::string& name) {
    fs::create_directories(g.out_dir);
    return fs::path(g.out_dir) / name;
}

// deconvolve -----------------------------------------------------------------

int cmd_deconvolve(const Globals& g, const std::string& images_path, std::string hed_path) {
    const Tensor images = load_stack(images_path, 4, 4, "images");
    if (images.dtype != DType::u8 || images.shape[3] != 3)
        throw CliError("images must be N×H×W×3 u8, got " + shape_string(images));
    const std::size_t n = images.shape[0];
    const auto h = static_cast<Index>(images.shape[1]), w = static_cast<Index>(images.shape[2]);
    std::vector<StainMap<float>> hed(n);
    parallel_for(n, resolve_threads(g), [&](std::size_t i) {
        hed[i] = rgb_to_hed<double>(stack_item<std::uint8_t>(images, i)).cast<float>();
    });

    OutputSet outputs;
    if (hed_path.empty()) hed_path = out_path(g, "hed.npy").string();
    write_npy(outputs.stage(hed_path), make_stack<float>(hed, h, w, 3));
    if (g.ppm) {
        for (std::size_t i = 0; i < n; ++i) {
            // Haematoxylin-only rendering.
            StainMap<double> only_h(h, w, 3);
            only_h.data.col(0) = hed[i].data.col(0).cast<double>();
            char name[32];
            std::snprintf(name, sizeof name, "hed_h_%03zu.ppm", i);
            write_ppm(outputs.stage(out_path(g, name)), quantize_rgb(hed_to_rgb(only_h)));
        }
    }
    outputs.commit();
    return 0;
}

// targets --------------------------------------------------------------------

int cmd_targets(const Globals& g, const std::string& images_path, const std::string& labels_path) {
    const auto cfg = resolve_config(g);
    const Tensor images = load_stack(images_path, 4, 4, "images");
    const Tensor labels = load_stack(labels_path, 4, 4, "labels");
    if (images.dtype != DType::u8 || images.shape[3] != 3)
        throw CliError("images must be N×H×W×3 u8, got " + shape_string(images));
    require_labels(labels);
    if (images.shape[0] != labels.shape[0] || images.shape[1] != labels.shape[1] ||
        images.shape[2] != labels.shape[2])
        throw CliError("image stack " + shape_string(images) + " and label stack " +
                       shape_string(labels) + " disagree");
    const std::size_t n = images.shape[0];
    const auto h = static_cast<Index>(images.shape[1]), w = static_cast<Index>(images.shape[2]);
    std::vector<ChannelField<float>> np(n), hv(n), tp(n);
    parallel_for(n, resolve_threads(g), [&](std::size_t i) {
        const auto t = make_training_targets<double>(label_plane(labels, i, 0),
                                                     label_plane(labels, i, 1),
                                                     stack_item<std::uint8_t>(images, i),
                                                     cfg.num_classes, cfg.smoothing);
        np[i] = ChannelField<float>(h, w, t.np.cast<float>().reshaped<Eigen::RowMajor>(h * w, 1).eval());
        hv[i] = t.hv.cast<float>();
        tp[i] = t.tp.cast<float>();
    });
    OutputSet outputs;
    write_npy(outputs.stage(out_path(g, "np.npy")), make_stack<float>(np, h, w, 1, true));
    write_npy(outputs.stage(out_path(g, "hv.npy")), make_stack<float>(hv, h, w, 2));
    write_npy(outputs.stage(out_path(g, "tp.npy")),
              make_stack<float>(tp, h, w, cfg.num_classes + 1));
    outputs.commit();
    return 0;
}

// postprocess ----------------------------------------------------------------

json types_json(const std::vector<TypedInstances>& results) {
    json j = json::object();
    for (std::size_t i = 0; i < results.size(); ++i) {
        json per = json::object();
        for (const auto& [id, cls] : results[i].types)
            per[std::to_string(id)] = {{"class", cls}, {"score", round6(results[i].scores.at(id))}};
        j[std::to_string(i)] = per;
    }
    return j;
}

int cmd_postprocess(const Globals& g, const std::string& np_path, const std::string& hv_path,
                    const std::string& tp_path) {
    const auto cfg = resolve_config(g);
    const Tensor np = load_stack(np_path, 3, 4, "np map");
    const Tensor hv = load_stack(hv_path, 4, 4, "hv map");
    const Tensor tp = load_stack(tp_path, 4, 4, "tp map");
    if (np.rank() == 4 && np.shape[3] != 1) throw CliError("np map must have one channel");
    if (hv.shape[3] != 2) throw CliError("hv map must have two channels");
    if (tp.shape[3] < 2) throw CliError("tp map needs a background and at least one class");
    for (const Tensor* t : {&hv, &tp})
        if (t->shape[0] != np.shape[0] || t->shape[1] != np.shape[1] || t->shape[2] != np.shape[2])
            throw CliError("np/hv/tp stacks disagree in N, H or W");
    const std::size_t n = np.shape[0];
    const auto h = static_cast<Index>(np.shape[1]), w = static_cast<Index>(np.shape[2]);

    std::vector<TypedInstances> results(n);
    parallel_for(n, resolve_threads(g), [&](std::size_t i) {
        PredictionBundle<double> bundle{to_field(stack_item<double>(np, i)),
                                        stack_item<double>(hv, i), stack_item<double>(tp, i)};
        results[i] = postprocess(bundle, cfg.postproc);
    });

    std::vector<LabelMap> inst;
    for (auto& r : results) inst.push_back(r.inst);
    OutputSet outputs;
    write_npy(outputs.stage(out_path(g, "inst.npy")), make_stack<std::int32_t>(inst, h, w));
    write_text(outputs.stage(out_path(g, "types.json")), types_json(results).dump(2) + "\n");
    outputs.commit();
    return 0;
}

// evaluate -------------------------------------------------------------------

int cmd_evaluate(const Globals& g, const std::string& gt_path, const std::string& inst_path,
                 const std::string& types_path) {
    const auto cfg = resolve_config(g);
    const Tensor gt = load_stack(gt_path, 4, 4, "ground-truth labels");
    require_labels(gt);
    const Tensor pred = load_stack(inst_path, 3, 4, "predicted instances");
    if (!fs::exists(types_path)) throw CliError("predicted types not found: " + types_path);
    const json types = read_json(types_path);
    if (gt.shape[0] != pred.shape[0])
        throw CliError("image count mismatch: " + std::to_string(gt.shape[0]) + " ground truth vs " +
                       std::to_string(pred.shape[0]) + " predicted");
    if (gt.shape[1] != pred.shape[1] || gt.shape[2] != pred.shape[2])
        throw CliError("ground truth and prediction tiles differ in size");
    const std::size_t n = gt.shape[0];

    std::vector<TypedInstances> gts(n), preds(n);
    parallel_for(n, resolve_threads(g), [&](std::size_t i) {
        gts[i] = majority_types(label_plane(gt, i, 0), label_plane(gt, i, 1), cfg.num_classes);
        TypedInstances p;
        p.inst = label_plane(pred, i, 0);
        const auto key = std::to_string(i);
        const json per = types.contains(key) ? types.at(key) : json::object();
        for (const auto id : InstanceIndex(p.inst).ids()) {
            const auto it = per.find(std::to_string(id));
            if (it == per.end())
                throw CliError("types.json lacks instance " + std::to_string(id) + " of image " + key);
            p.types[id] = it->at("class").get<int>();
            p.scores[id] = it->contains("score") ? it->at("score").get<double>() : 0.0;
        }
        preds[i] = std::move(p);
    });

    const auto report = evaluate(gts, preds, cfg.num_classes);
    OutputSet outputs;
    write_text(outputs.stage(out_path(g, "report.json")), report_json(report).dump(2) + "\n");
    write_text(outputs.stage(out_path(g, "report.csv")), report_csv(report));
    outputs.commit();
    return 0;
}

// foldselect -----------------------------------------------------------------

std::vector<LabeledTile> load_split(const fs::path& path) {
    const Tensor labels = load_stack(path, 4, 4, "fold labels");
    require_labels(labels);
    std::vector<LabeledTile> tiles;
    for (std::size_t i = 0; i < labels.shape[0]; ++i)
        tiles.push_back({label_plane(labels, i, 0), label_plane(labels, i, 1)});
    return tiles;
}

int cmd_foldselect(const Globals& g, const std::string& folds_dir) {
    const auto cfg = resolve_config(g);
    if (!fs::is_directory(folds_dir)) throw CliError("folds directory not found: " + folds_dir);
    static const std::regex pattern(R"(fold_(\d+)_(train|valid)_labels\.npy)");
    std::map<int, std::pair<fs::path, fs::path>> found;
    std::set<fs::path> entries;
    for (const auto& e : fs::directory_iterator(folds_dir))
        if (e.is_regular_file()) entries.insert(e.path());
    for (const auto& p : entries) {
        std::smatch m;
        const std::string name = p.filename().string();
        if (!std::regex_match(name, m, pattern)) {
            std::cerr << "warning: ignoring " << name << " (expected fold_XX_{train,valid}_labels.npy)\n";
            continue;
        }
        auto& slot = found[std::stoi(m[1].str())];
        (m[2] == "train" ? slot.first : slot.second) = p;
    }
    std::vector<int> ids;
    for (const auto& [id, paths] : found) {
        if (paths.first.empty() || paths.second.empty()) {
            std::cerr << "warning: fold " << id << " lacks a train or valid file; skipped\n";
            continue;
        }
        ids.push_back(id);
    }
    if (ids.empty()) throw CliError("no complete folds found in " + folds_dir);

    std::vector<FoldReport> reports(ids.size());
    parallel_for(ids.size(), resolve_threads(g), [&](std::size_t k) {
        const auto& paths = found.at(ids[k]);
        reports[k] = fold_report(ids[k], class_counts(load_split(paths.first), cfg.num_classes),
                                 class_counts(load_split(paths.second), cfg.num_classes));
    });
    OutputSet outputs;
    write_text(outputs.stage(out_path(g, "ranking.csv")), ranking_csv(rank_reports(reports)));
    outputs.commit();
    return 0;
}

// loss -----------------------------------------------------------------------

int cmd_loss(const Globals& g, const std::string& pred_path, const std::string& target_path,
             std::optional<double> gamma, std::optional<double> eps) {
    auto cfg = resolve_config(g);
    if (gamma) cfg.loss.gamma = *gamma;
    if (eps) cfg.loss.dice.eps = *eps;
    const Tensor pred = load_stack(pred_path, 1, 8, "prediction");
    const Tensor target = load_stack(target_path, 1, 8, "target");
    if (pred.shape != target.shape)
        throw CliError("shape mismatch: " + shape_string(pred) + " vs " + shape_string(target));
    const auto channels = static_cast<Index>(pred.shape.back());
    const auto rows = channels ? static_cast<Index>(pred.size()) / channels : 0;
    const auto p = pred.values<double>();
    const auto y = target.values<double>();
    using Rows = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const Rows> pm(p.data(), rows, channels), ym(y.data(), rows, channels);
    const auto loss = tp_branch_loss(pm, ym, cfg.loss);
    const json out = {{"loss", round6(loss.value)},
                      {"focal", round6(loss.focal)},
                      {"dice", round6(loss.dice)},
                      {"focal_weight", kFocalWeight},
                      {"gamma", cfg.loss.gamma},
                      {"eps", cfg.loss.dice.eps}};
    std::cout << out.dump() << '\n';
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Nucleus segmentation pre/post-processing, metrics and fold statistics"};
    app.require_subcommand(1);
    Globals g;
    unsigned threads = 0;
    auto* threads_opt = app.add_option("--threads", threads, "Worker threads (env NUCLEOFORGE_THREADS)")
                            ->check(CLI::PositiveNumber);
    app.add_option("--config", g.config, "Pipeline configuration JSON");
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_flag("--ppm", g.ppm, "Write PPM previews where supported");
    app.fallthrough();

    std::string images, labels, hed_out, np_in, hv_in, tp_in, gt_in, inst_in, types_in, folds,
        pred_in, target_in;
    double gamma = 0.0, eps = 0.0;

    auto* deconv = app.add_subcommand("deconvolve", "RGB stack to HED optical densities");
    deconv->add_option("--images", images, "N×H×W×3 u8 images.npy")->required();
    deconv->add_option("--out", hed_out, "Output path (default <out-dir>/hed.npy)");

    auto* targets = app.add_subcommand("targets", "NP / HV / smoothed TP training targets");
    targets->add_option("--images", images, "N×H×W×3 u8 images.npy")->required();
    targets->add_option("--labels", labels, "N×H×W×2 labels.npy (instance, class)")->required();

    auto* post = app.add_subcommand("postprocess", "Instances and types from predicted maps");
    post->add_option("--np", np_in, "N×H×W nucleus probability")->required();
    post->add_option("--hv", hv_in, "N×H×W×2 HV maps")->required();
    post->add_option("--tp", tp_in, "N×H×W×(C+1) type probabilities")->required();

    auto* eval = app.add_subcommand("evaluate", "PQ, mPQ+ and multi-class R²");
    eval->add_option("--gt", gt_in, "Ground-truth N×H×W×2 labels.npy")->required();
    eval->add_option("--pred-inst", inst_in, "Predicted N×H×W inst.npy")->required();
    eval->add_option("--pred-types", types_in, "Predicted types.json")->required();

    auto* fold = app.add_subcommand("foldselect", "Rank folds by train/valid composition");
    fold->add_option("--folds", folds, "Directory of fold_XX_{train,valid}_labels.npy")->required();

    auto* loss = app.add_subcommand("loss", "Type-branch loss between two probability stacks");
    loss->add_option("--pred", pred_in, "Predicted probabilities .npy")->required();
    loss->add_option("--target", target_in, "Target probabilities .npy")->required();
    auto* gamma_opt = loss->add_option("--gamma", gamma, "Focal gamma");
    auto* eps_opt = loss->add_option("--eps", eps, "Dice eps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    if (threads_opt->count()) g.threads = threads;

    try {
        if (*deconv) return cmd_deconvolve(g, images, hed_out);
        if (*targets) return cmd_targets(g, images, labels);
        if (*post) return cmd_postprocess(g, np_in, hv_in, tp_in);
        if (*eval) return cmd_evaluate(g, gt_in, inst_in, types_in);
        if (*fold) return cmd_foldselect(g, folds);
        if (*loss)
            return cmd_loss(g, pred_in, target_in,
                            gamma_opt->count() ? std::optional(gamma) : std::nullopt,
                            eps_opt->count() ? std::optional(eps) : std::nullopt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"nucleoforge"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace nucleoforge
