#pragma once

#include <string>
#include <vector>

#include "cnnf/nn.hpp"
#include "cnnf/train.hpp"

namespace cnnf {

// Architecture variants for the component study. `full` is the reference
// network; each other variant removes exactly one ingredient, except
// `baseline`, which removes all three (one conv per block, no batch norm,
// no dropout) while keeping the same fully connected head.
struct VariantSpec {
    std::string id;
    std::string description;
    ModelConfig config;
};

const std::vector<std::string>& all_variant_ids();
VariantSpec variant_spec(const std::string& id);  // unknown id -> ConfigError

struct VariantResult {
    std::string id;
    double final_acc = 0.0;
    double best_acc = 0.0;
    std::int64_t param_count = 0;
    double seconds = 0.0;
    std::vector<MetricsRecord> metrics;  // last seed's per-epoch records
    bool failed = false;
    std::string error;
};

// Trains each variant under the shared protocol (same seed(s), epochs, and
// data policy). With seeds > 1, accuracies are averaged over base.seed,
// base.seed+1, ... A variant that throws is marked failed and the rest
// continue. Per-variant outputs land in base.out_dir/<variant>[ _seedK ].
std::vector<VariantResult> run_ablation(const TrainConfig& base, const std::vector<std::string>& ids,
                                        int seeds, const Dataset& train_set, const Dataset& test_set);

inline constexpr const char* kAblationCsvHeader = "variant,final_acc,best_acc,delta_vs_full,params,seconds";

// Comparison table, one row per successful variant, sorted by descending
// final accuracy; deltas are against `full` when present.
std::string render_report_csv(const std::vector<VariantResult>& results);
std::string render_report_text(const std::vector<VariantResult>& results);

}  // namespace cnnf
