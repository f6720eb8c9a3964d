#include "cnnf/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "cnnf/error.hpp"

namespace cnnf {

const std::vector<std::string>& all_variant_ids() {
    static const std::vector<std::string> ids = {"full", "no_batchnorm", "no_dropout", "two_blocks",
                                                 "baseline"};
    return ids;
}

VariantSpec variant_spec(const std::string& id) {
    VariantSpec spec;
    spec.id = id;
    spec.config = ModelConfig{};
    if (id == "full") {
        spec.description = "reference network: three conv blocks with batch norm and dropout";
    } else if (id == "no_batchnorm") {
        spec.description = "batch norm removed; conv layers regain bias terms";
        spec.config.use_batchnorm = false;
    } else if (id == "no_dropout") {
        spec.description = "all dropout layers removed";
        spec.config.conv_dropout = 0.0;
        spec.config.fc_dropout = 0.0;
    } else if (id == "two_blocks") {
        spec.description = "third conv block removed; flatten size 128*8*8 = 8192";
        spec.config.blocks = {{2, 64}, {2, 128}};
    } else if (id == "baseline") {
        spec.description = "one conv per block, no batch norm, no dropout, same FC head";
        spec.config.blocks = {{1, 64}, {1, 128}, {1, 256}};
        spec.config.use_batchnorm = false;
        spec.config.conv_dropout = 0.0;
        spec.config.fc_dropout = 0.0;
    } else {
        throw ConfigError("unknown variant '" + id + "'");
    }
    spec.config.validate();
    return spec;
}

std::vector<VariantResult> run_ablation(const TrainConfig& base, const std::vector<std::string>& ids,
                                        int seeds, const Dataset& train_set, const Dataset& test_set) {
    if (ids.empty()) throw ValueError("ablation needs at least one variant");
    if (seeds < 1) throw ValueError("seed count must be >= 1");
    namespace fs = std::filesystem;
    std::vector<VariantResult> results;
    for (const auto& id : ids) {
        VariantResult result;
        result.id = id;
        try {
            const VariantSpec spec = variant_spec(id);
            double final_sum = 0.0, best_sum = 0.0, seconds_sum = 0.0;
            for (int k = 0; k < seeds; ++k) {
                TrainConfig cfg = base;
                cfg.variant = id;
                cfg.seed = base.seed + static_cast<std::uint64_t>(k);
                if (!base.out_dir.empty()) {
                    std::string leaf = id;
                    if (seeds > 1) leaf += "_seed" + std::to_string(k);
                    cfg.out_dir = (fs::path(base.out_dir) / leaf).string();
                }
                Model model = build_model(spec.config, cfg.seed);
                result.param_count = model.param_count();
                AdamState adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
                std::fprintf(stderr, "[ablate] %s seed %llu\n", id.c_str(),
                             static_cast<unsigned long long>(cfg.seed));
                auto records = train_model(model, adam, cfg, train_set, test_set);
                if (records.empty()) throw StateError("training produced no epochs");
                double best = 0.0, secs = 0.0;
                for (const auto& r : records) {
                    best = std::max(best, r.test_acc);
                    secs += r.seconds;
                }
                final_sum += records.back().test_acc;
                best_sum += best;
                seconds_sum += secs;
                result.metrics = std::move(records);
            }
            result.final_acc = final_sum / seeds;
            result.best_acc = best_sum / seeds;
            result.seconds = seconds_sum / seeds;
        } catch (const Error& e) {
            result.failed = true;
            result.error = e.what();
            std::fprintf(stderr, "[ablate] %s failed: %s\n", id.c_str(), e.what());
        }
        results.push_back(std::move(result));
    }
    return results;
}

namespace {

std::vector<const VariantResult*> sorted_ok(const std::vector<VariantResult>& results) {
    std::vector<const VariantResult*> ok;
    for (const auto& r : results) {
        if (!r.failed) ok.push_back(&r);
    }
    std::stable_sort(ok.begin(), ok.end(), [](const VariantResult* a, const VariantResult* b) {
        return a->final_acc > b->final_acc;
    });
    return ok;
}

const VariantResult* find_full(const std::vector<VariantResult>& results) {
    for (const auto& r : results) {
        if (!r.failed && r.id == "full") return &r;
    }
    return nullptr;
}

}  // namespace

std::string render_report_csv(const std::vector<VariantResult>& results) {
    const auto ok = sorted_ok(results);
    if (ok.empty()) throw ValueError("no completed variants to report");
    const VariantResult* full = find_full(results);
    std::string out = std::string(kAblationCsvHeader) + "\n";
    char buf[256];
    for (const auto* r : ok) {
        if (full) {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%lld,%.3f", r->id.c_str(), r->final_acc,
                          r->best_acc, r->final_acc - full->final_acc,
                          static_cast<long long>(r->param_count), r->seconds);
        } else {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,,%lld,%.3f", r->id.c_str(), r->final_acc,
                          r->best_acc, static_cast<long long>(r->param_count), r->seconds);
        }
        out += buf;
        out += "\n";
    }
    return out;
}

std::string render_report_text(const std::vector<VariantResult>& results) {
    const auto ok = sorted_ok(results);
    if (ok.empty()) throw ValueError("no completed variants to report");
    const VariantResult* full = find_full(results);
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-14s %10s %10s %12s %12s\n", "variant", "final_acc", "best_acc",
                  "delta_vs_full", "params");
    out += buf;
    for (const auto* r : ok) {
        if (full) {
            std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f %12.4f %12lld\n", r->id.c_str(),
                          r->final_acc, r->best_acc, r->final_acc - full->final_acc,
                          static_cast<long long>(r->param_count));
        } else {
            std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f %12s %12lld\n", r->id.c_str(),
                          r->final_acc, r->best_acc, "-", static_cast<long long>(r->param_count));
        }
        out += buf;
    }
    for (const auto& r : results) {
        if (r.failed) {
            out += r.id + ": FAILED (" + r.error + ")\n";
        }
    }
    return out;
}

}  // namespace cnnf
