// cnnf: train/evaluate/ablate a small CIFAR-10 CNN, check its gradients,
// plot metrics, and dump activation grids. See README.md for the format
// contracts.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cnnf/ablation.hpp"
#include "cnnf/data.hpp"
#include "cnnf/error.hpp"
#include "cnnf/nn.hpp"
#include "cnnf/train.hpp"
#include "cnnf/viz.hpp"

namespace fs = std::filesystem;

namespace {

// Distinct from cnnf::Error so these exit with the usage code (2), not 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonArgs {
    std::string data_dir;
    std::string out;
    std::uint64_t seed = 42;
    bool deterministic = true;
    std::string normalize = "fixed";
    bool augment = true;
    std::int64_t limit_train = 0;  // 0: no limit
    std::int64_t limit_test = 0;
    std::int64_t synthetic = 0;  // >0: generate instead of loading
    std::string config_path;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_data) {
    if (with_data) {
        cmd->add_option("--data-dir", args.data_dir, "directory holding data_batch_1..5.bin and test_batch.bin");
        cmd->add_option("--synthetic", args.synthetic,
                        "generate a synthetic dataset of this many training samples instead of loading");
        cmd->add_option("--limit-train", args.limit_train, "use only the first N training samples");
        cmd->add_option("--limit-test", args.limit_test, "use only the first N test samples");
        cmd->add_option("--normalize", args.normalize, "pixel normalization: fixed (to [-1,1]) or dataset statistics")
            ->check(CLI::IsMember({"fixed", "dataset"}));
    }
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_option("--seed", args.seed, "root RNG seed");
    cmd->add_option("--deterministic", args.deterministic,
                    "pin every emitted byte to (seed, config); wall-clock columns become 0");
    cmd->add_option("--config", args.config_path,
                    "flat `key = value` config file; flags override file values");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Applies a flat `key = value` file to options of the parsed subcommand that
// were not set on the command line (flag > file > default). Keys are the long
// flag names; underscores are accepted in place of dashes so the keys can
// mirror the training-config field names (batch_size, data_dir, ...).
void apply_config_file(CLI::App* cmd, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path + ": line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw UsageError(path + ": line " + std::to_string(line_no) + ": empty key");
        }
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        for (auto& ch : key) {
            if (ch == '_') ch = '-';
        }
        if (key == "out-dir") key = "out";  // accept the config-struct spelling
        if (key == "config") {
            throw UsageError(path + ": line " + std::to_string(line_no) +
                             ": config files cannot nest");
        }
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr) {
            throw UsageError(path + ": line " + std::to_string(line_no) + ": unknown key '" + key +
                             "' for subcommand '" + cmd->get_name() + "'");
        }
        if (opt->count() > 0) continue;  // command line wins
        try {
            opt->add_result(value);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

std::pair<cnnf::Dataset, cnnf::Dataset> load_data(const CommonArgs& args) {
    cnnf::Dataset train, test;
    if (args.synthetic > 0) {
        train = cnnf::synthesize_dataset(args.synthetic, args.seed);
        const std::int64_t n_test = std::max<std::int64_t>(10, args.synthetic / 5);
        test = cnnf::synthesize_dataset(n_test, args.seed + 1, cnnf::Split::kTest);
    } else {
        if (args.data_dir.empty()) {
            throw cnnf::ConfigError("no input data: pass --data-dir or --synthetic N");
        }
        auto loaded = cnnf::load_cifar10(args.data_dir);
        train = std::move(loaded.first);
        test = std::move(loaded.second);
    }
    if (args.limit_train > 0 && args.limit_train < train.size()) train.truncate(args.limit_train);
    if (args.limit_test > 0 && args.limit_test < test.size()) test.truncate(args.limit_test);
    return {std::move(train), std::move(test)};
}

void write_resolved_config(const std::string& out_dir,
                           const std::vector<std::pair<std::string, std::string>>& kv) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "config_resolved.txt", std::ios::trunc);
    if (!f) throw cnnf::IoError("cannot write resolved config in " + out_dir);
    for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
}

std::string fmt_u64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%" PRIu64, v);
    return buf;
}

std::string fmt_f(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::vector<std::pair<std::string, std::string>> common_kv(const std::string& command,
                                                           const CommonArgs& a) {
    return {
        {"command", command},
        {"data_dir", a.data_dir},
        {"synthetic", std::to_string(a.synthetic)},
        {"limit_train", std::to_string(a.limit_train)},
        {"limit_test", std::to_string(a.limit_test)},
        {"out", a.out},
        {"seed", fmt_u64(a.seed)},
        {"deterministic", a.deterministic ? "true" : "false"},
        {"normalize", a.normalize},
        {"augment", a.augment ? "true" : "false"},
    };
}

cnnf::TrainConfig make_train_config(const CommonArgs& a, std::int64_t epochs, std::int64_t batch_size,
                                    double lr, const std::string& variant) {
    cnnf::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr = lr;
    cfg.seed = a.seed;
    cfg.variant = variant;
    cfg.data_dir = a.data_dir;
    cfg.out_dir = a.out;
    cfg.deterministic = a.deterministic;
    cfg.augment = a.augment;
    cfg.normalize = a.normalize;
    cfg.validate();
    return cfg;
}

int cmd_train(const CommonArgs& common, std::int64_t epochs, std::int64_t batch_size, double lr,
              const std::string& variant, const std::string& resume) {
    auto cfg = make_train_config(common, epochs, batch_size, lr, variant);
    const cnnf::VariantSpec spec = cnnf::variant_spec(variant);
    auto [train_set, test_set] = load_data(common);

    cnnf::Model model = cnnf::build_model(spec.config, cfg.seed);
    cnnf::AdamState adam(cnnf::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    std::int64_t start_epoch = 0, start_step = 0;
    if (!resume.empty()) {
        const auto meta = cnnf::read_checkpoint_meta(resume);
        if (meta.variant != variant) {
            throw cnnf::ConfigError("checkpoint is for variant '" + meta.variant +
                                    "', requested '" + variant + "'");
        }
        if (meta.seed != cfg.seed) {
            throw cnnf::ConfigError("checkpoint was trained with seed " + fmt_u64(meta.seed) +
                                    "; resuming needs the same seed");
        }
        cnnf::load_checkpoint(resume, model, &adam);
        start_epoch = meta.epoch;
        start_step = meta.step;
        std::fprintf(stderr, "resuming after epoch %" PRId64 " (step %" PRId64 ")\n", start_epoch,
                     start_step);
    }

    auto kv = common_kv("train", common);
    kv.emplace_back("epochs", std::to_string(epochs));
    kv.emplace_back("batch_size", std::to_string(batch_size));
    kv.emplace_back("lr", fmt_f(lr));
    kv.emplace_back("variant", variant);
    kv.emplace_back("resume", resume);
    kv.emplace_back("params", std::to_string(model.param_count()));
    write_resolved_config(common.out, kv);

    const auto records = cnnf::train_model(model, adam, cfg, train_set, test_set, start_epoch, start_step);
    if (!records.empty()) {
        double best = 0.0;
        for (const auto& r : records) best = std::max(best, r.test_acc);
        std::printf("final_test_acc=%.6f best_test_acc=%.6f epochs=%" PRId64 "\n",
                    records.back().test_acc, best, records.back().epoch);
    }
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& checkpoint, std::int64_t batch_size) {
    if (checkpoint.empty()) throw UsageError("eval requires --checkpoint");
    const auto meta = cnnf::read_checkpoint_meta(checkpoint);
    cnnf::Model model = cnnf::build_model(cnnf::variant_spec(meta.variant).config, meta.seed);
    cnnf::load_checkpoint(checkpoint, model, nullptr);
    auto [train_set, test_set] = load_data(common);
    const cnnf::Normalizer norm = common.normalize == "dataset"
                                      ? cnnf::Normalizer::from_dataset(train_set)
                                      : cnnf::Normalizer::fixed_range();
    const auto res = cnnf::evaluate(model, test_set, batch_size, norm);
    std::printf("variant=%s epoch=%" PRId64 " test_acc=%.6f test_loss=%.6f n=%" PRId64 "\n",
                meta.variant.c_str(), meta.epoch, res.accuracy, res.loss, test_set.size());
    if (!common.out.empty()) {
        auto kv = common_kv("eval", common);
        kv.emplace_back("checkpoint", checkpoint);
        kv.emplace_back("variant", meta.variant);
        write_resolved_config(common.out, kv);
        std::ofstream f(fs::path(common.out) / "eval.txt", std::ios::trunc);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "test_acc=%.6f\ntest_loss=%.6f\nn=%" PRId64 "\n", res.accuracy,
                      res.loss, test_set.size());
        f << buf;
    }
    return 0;
}

int cmd_gradcheck(const CommonArgs& common, double eps, double tolerance) {
    const auto report = cnnf::gradient_check(cnnf::miniature_config(), common.seed, eps);
    std::printf("%-16s %14s\n", "tensor", "max_rel_err");
    for (const auto& e : report.entries) {
        std::printf("%-16s %14.3e\n", e.tensor.c_str(), e.max_rel_err);
    }
    if (!common.out.empty()) {
        auto kv = common_kv("gradcheck", common);
        kv.emplace_back("eps", fmt_f(eps));
        kv.emplace_back("tolerance", fmt_f(tolerance));
        write_resolved_config(common.out, kv);
    }
    if (!report.pass(tolerance)) {
        for (const auto& e : report.entries) {
            if (e.max_rel_err > tolerance) {
                std::fprintf(stderr,
                             "FAIL %s[%" PRId64 "]: analytic=%.9e numeric=%.9e rel_err=%.3e\n",
                             e.tensor.c_str(), e.worst_index, e.analytic, e.numeric, e.max_rel_err);
            }
        }
        throw cnnf::NumericError("gradient check failed: worst " + report.worst_tensor + " rel err " +
                                 std::to_string(report.worst));
    }
    std::printf("gradient check passed (worst %.3e in %s, tolerance %.1e)\n", report.worst,
                report.worst_tensor.c_str(), tolerance);
    return 0;
}

int cmd_ablate(const CommonArgs& common, std::int64_t epochs, std::int64_t batch_size, double lr,
               const std::string& variant_list, int seeds) {
    std::vector<std::string> ids;
    if (variant_list == "all") {
        ids = cnnf::all_variant_ids();
    } else {
        std::size_t start = 0;
        while (start <= variant_list.size()) {
            const std::size_t comma = variant_list.find(',', start);
            const std::string id = variant_list.substr(start, comma - start);
            if (!id.empty()) ids.push_back(id);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        for (const auto& id : ids) cnnf::variant_spec(id);  // validate early
    }
    if (ids.empty()) throw UsageError("ablate: empty variant list");

    auto base = make_train_config(common, epochs, batch_size, lr, "full");
    auto [train_set, test_set] = load_data(common);

    auto kv = common_kv("ablate", common);
    kv.emplace_back("epochs", std::to_string(epochs));
    kv.emplace_back("batch_size", std::to_string(batch_size));
    kv.emplace_back("lr", fmt_f(lr));
    kv.emplace_back("variant", variant_list);
    kv.emplace_back("seeds", std::to_string(seeds));
    write_resolved_config(common.out, kv);

    const auto results = cnnf::run_ablation(base, ids, seeds, train_set, test_set);
    const std::string csv = cnnf::render_report_csv(results);
    if (!common.out.empty()) {
        std::ofstream f(fs::path(common.out) / "ablation_report.csv", std::ios::trunc);
        if (!f) throw cnnf::IoError("cannot write ablation report in " + common.out);
        f << csv;
    }
    std::fputs(cnnf::render_report_text(results).c_str(), stdout);
    for (const auto& r : results) {
        if (r.failed) return 1;
    }
    return 0;
}

int cmd_plot(const CommonArgs& common, const std::vector<std::string>& files) {
    std::vector<cnnf::MetricsSeries> series;
    series.reserve(files.size());
    for (const auto& f : files) series.push_back(cnnf::read_metrics_csv(f));
    const std::string svg = cnnf::render_comparison_svg(series);
    const std::string out_dir = common.out.empty() ? std::string(".") : common.out;
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "comparison.svg").string();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw cnnf::IoError("cannot open for writing: " + path);
    f << svg;
    if (!f) throw cnnf::IoError("write failed: " + path);
    if (!common.out.empty()) {
        auto kv = common_kv("plot", common);
        std::string joined;
        for (const auto& file : files) {
            if (!joined.empty()) joined += ",";
            joined += file;
        }
        kv.emplace_back("inputs", joined);
        write_resolved_config(common.out, kv);
    }
    std::printf("%s\n", path.c_str());
    return 0;
}

int cmd_dump_activations(const CommonArgs& common, const std::string& checkpoint, std::int64_t index) {
    if (checkpoint.empty()) throw UsageError("dump-activations requires --checkpoint");
    const auto meta = cnnf::read_checkpoint_meta(checkpoint);
    cnnf::Model model = cnnf::build_model(cnnf::variant_spec(meta.variant).config, meta.seed);
    cnnf::load_checkpoint(checkpoint, model, nullptr);
    auto [train_set, test_set] = load_data(common);
    if (index < 0 || index >= test_set.size()) {
        throw UsageError("--index " + std::to_string(index) + " outside test set of " +
                         std::to_string(test_set.size()));
    }
    const cnnf::Normalizer norm = common.normalize == "dataset"
                                      ? cnnf::Normalizer::from_dataset(train_set)
                                      : cnnf::Normalizer::fixed_range();
    cnnf::Tensor x(cnnf::Shape{1, cnnf::kImageChannels, cnnf::kImageDim, cnnf::kImageDim});
    cnnf::normalize_image(test_set.image(index), norm, x.data());
    const std::string out_dir = common.out.empty() ? std::string("activations") : common.out;
    auto kv = common_kv("dump-activations", common);
    kv.emplace_back("checkpoint", checkpoint);
    kv.emplace_back("index", std::to_string(index));
    write_resolved_config(out_dir, kv);
    const auto written = cnnf::dump_activation_grids(model, x, out_dir);
    for (const auto& p : written) std::printf("%s\n", p.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cnnf: a small CIFAR-10 CNN training and experiment tool"};
    app.require_subcommand(1);

    CommonArgs common;
    std::int64_t epochs = 10, batch_size = 64, index = 0;
    double lr = 0.001, eps = 1e-5, tolerance = 1e-4;
    int seeds = 1;
    std::string variant = "full", variant_list = "all", checkpoint, resume;
    std::vector<std::string> plot_files;

    CLI::App* train = app.add_subcommand("train", "train one model variant");
    add_common(train, common, true);
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--batch-size", batch_size, "mini-batch size");
    train->add_option("--lr", lr, "Adam learning rate");
    train->add_option("--variant", variant, "architecture variant")
        ->check(CLI::IsMember(cnnf::all_variant_ids()));
    train->add_option("--augment", common.augment, "random flip + pad-and-crop on the train split");
    train->add_option("--resume", resume, "checkpoint to continue from");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval, common, true);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file");
    eval->add_option("--batch-size", batch_size, "evaluation batch size");

    CLI::App* ablate = app.add_subcommand("ablate", "train and compare architecture variants");
    add_common(ablate, common, true);
    ablate->add_option("--epochs", epochs, "training epochs per variant");
    ablate->add_option("--batch-size", batch_size, "mini-batch size");
    ablate->add_option("--lr", lr, "Adam learning rate");
    ablate->add_option("--variant", variant_list, "comma-separated variant ids, or 'all'");
    ablate->add_option("--seeds", seeds, "average each variant over this many consecutive seeds");
    ablate->add_option("--augment", common.augment, "random flip + pad-and-crop on the train split");

    CLI::App* gradcheck = app.add_subcommand("gradcheck",
                                             "finite-difference check of every layer gradient (64-bit)");
    add_common(gradcheck, common, false);
    gradcheck->add_option("--eps", eps, "finite-difference step");
    gradcheck->add_option("--tolerance", tolerance, "max relative error allowed");

    CLI::App* plot = app.add_subcommand("plot", "render metrics CSVs as a two-panel SVG chart");
    add_common(plot, common, false);
    plot->add_option("files", plot_files, "metrics.csv files")->required()->expected(-1);

    CLI::App* dump = app.add_subcommand("dump-activations",
                                        "write per-layer activation grids for one test image");
    add_common(dump, common, true);
    dump->add_option("--checkpoint", checkpoint, "checkpoint file");
    dump->add_option("--index", index, "test-set image index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (!common.config_path.empty()) {
            for (CLI::App* sub : {train, eval, ablate, gradcheck, plot, dump}) {
                if (sub->parsed()) apply_config_file(sub, common.config_path);
            }
        }
        if (train->parsed()) return cmd_train(common, epochs, batch_size, lr, variant, resume);
        if (eval->parsed()) return cmd_eval(common, checkpoint, batch_size);
        if (ablate->parsed()) return cmd_ablate(common, epochs, batch_size, lr, variant_list, seeds);
        if (gradcheck->parsed()) return cmd_gradcheck(common, eps, tolerance);
        if (plot->parsed()) return cmd_plot(common, plot_files);
        if (dump->parsed()) return cmd_dump_activations(common, checkpoint, index);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const cnnf::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
