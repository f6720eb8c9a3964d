#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cnnf/data.hpp"
#include "cnnf/nn.hpp"
#include "cnnf/optim.hpp"

namespace cnnf {

struct TrainConfig {
    std::int64_t epochs = 10;
    std::int64_t batch_size = 64;
    double lr = 0.001;
    std::uint64_t seed = 42;
    std::string variant = "full";
    std::string data_dir;
    std::string out_dir;       // empty: no files written
    bool deterministic = true;
    std::string precision = "float32";
    bool augment = true;
    std::string normalize = "fixed";  // fixed | dataset

    void validate() const;
};

struct MetricsRecord {
    std::int64_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double seconds = 0.0;  // 0 in deterministic mode; timing goes to the log
};

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,train_acc,test_loss,test_acc,seconds";

std::string format_metrics_csv_row(const MetricsRecord& r);
std::string format_metrics_json_row(const MetricsRecord& r);

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
};

// Eval-mode pass over a dataset: no augmentation, no shuffling, running BN
// statistics. Per-sample results do not depend on the batch partition.
EvalResult evaluate(Model& model, const Dataset& ds, std::int64_t batch_size = 64,
                    const Normalizer& norm = Normalizer::fixed_range());

struct TrainHooks {
    // Called after each epoch's metrics are recorded; return false to stop.
    std::function<bool(const MetricsRecord&)> on_epoch;
};

// Runs the training loop from start_epoch (0-based) to cfg.epochs. When
// cfg.out_dir is set, metrics.csv / metrics.jsonl are appended incrementally
// and a checkpoint is written at every epoch end (checkpoint_latest.cnnf,
// plus checkpoint_final.cnnf after the last epoch). start_step carries the
// global step counter across resumes.
std::vector<MetricsRecord> train_model(Model& model, AdamState& adam, const TrainConfig& cfg,
                                       const Dataset& train_set, const Dataset& test_set,
                                       std::int64_t start_epoch = 0, std::int64_t start_step = 0,
                                       const TrainHooks& hooks = {});

// ---- checkpoints ------------------------------------------------------

struct CheckpointMeta {
    std::string variant;
    std::int64_t epoch = 0;  // completed epochs
    std::uint64_t seed = 0;
    std::int64_t step = 0;  // global optimizer steps taken
};

void save_checkpoint(const std::string& path, Model& model, const AdamState* adam,
                     const CheckpointMeta& meta);

// Reads only the header, so callers can build the right model first.
CheckpointMeta read_checkpoint_meta(const std::string& path);

// Fills a model (already built for the checkpoint's variant) and optionally
// the optimizer state. Returns the header metadata.
CheckpointMeta load_checkpoint(const std::string& path, Model& model, AdamState* adam);

// ---- gradient checking ------------------------------------------------

struct GradCheckEntry {
    std::string tensor;  // parameter name, or "input"
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;
    std::string worst_tensor;

    bool pass(double tolerance) const { return worst <= tolerance; }
};

// Central finite differences in double precision over every parameter and
// the input of an arbitrary stack. rel err = |a-n| / max(|a|,|n|,1e-8); the
// context is replayed identically for every probe so dropout masks stay
// fixed.
GradCheckReport gradient_check_model(ModelT<double>& model, const TensorT<double>& x,
                                     const std::vector<std::int64_t>& labels,
                                     const StepContext& ctx, double eps = 1e-5);

// The standard harness: a miniature configuration (8x8 inputs, two small
// blocks) exercising conv, BN, ReLU, max-pool, dropout, and dense together.
ModelConfig miniature_config();
GradCheckReport gradient_check(const ModelConfig& config, std::uint64_t seed, double eps = 1e-5);

}  // namespace cnnf
