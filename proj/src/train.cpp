#include "cnnf/train.hpp"

#include <bit>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cnnf/error.hpp"

namespace cnnf {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (precision != "float32" && precision != "float64") {
        throw ConfigError("precision must be float32 or float64, got '" + precision + "'");
    }
    if (normalize != "fixed" && normalize != "dataset") {
        throw ConfigError("normalize must be 'fixed' or 'dataset', got '" + normalize + "'");
    }
}

std::string format_metrics_csv_row(const MetricsRecord& r) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.6f,%.6f,%.6f,%.6f,%.3f", r.epoch, r.train_loss,
                  r.train_acc, r.test_loss, r.test_acc, r.seconds);
    return buf;
}

std::string format_metrics_json_row(const MetricsRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%" PRId64
                  ",\"train_loss\":%.6f,\"train_acc\":%.6f,\"test_loss\":%.6f,\"test_acc\":%.6f,"
                  "\"seconds\":%.3f}",
                  r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.seconds);
    return buf;
}

EvalResult evaluate(Model& model, const Dataset& ds, std::int64_t batch_size, const Normalizer& norm) {
    BatchOptions opts;
    opts.batch_size = batch_size;
    opts.shuffle = false;
    opts.augment = false;
    opts.norm = norm;
    BatchStream stream(ds, opts, 0, 0);
    StepContext ctx;
    ctx.mode = Mode::kEval;
    double loss_sum = 0.0;
    std::int64_t hits = 0;
    Batch batch;
    while (stream.next(batch)) {
        Tensor logits = model.forward(batch.x, ctx);
        const auto res = softmax_crossentropy(logits, batch.y);
        loss_sum += res.loss * static_cast<double>(batch.y.size());
        const auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < batch.y.size(); ++i) {
            if (pred[i] == batch.y[i]) ++hits;
        }
    }
    const double n = static_cast<double>(ds.size());
    return {static_cast<double>(hits) / n, loss_sum / n};
}

std::vector<MetricsRecord> train_model(Model& model, AdamState& adam, const TrainConfig& cfg,
                                       const Dataset& train_set, const Dataset& test_set,
                                       std::int64_t start_epoch, std::int64_t start_step,
                                       const TrainHooks& hooks) {
    cfg.validate();
    if (cfg.precision != "float32") {
        throw ConfigError("training runs in float32; float64 is reserved for gradient checking");
    }
    namespace fs = std::filesystem;
    const bool writing = !cfg.out_dir.empty();
    std::ofstream csv, jsonl;
    if (writing) {
        fs::create_directories(cfg.out_dir);
        const auto mode = start_epoch == 0 ? std::ios::trunc : std::ios::app;
        csv.open(fs::path(cfg.out_dir) / "metrics.csv", mode);
        jsonl.open(fs::path(cfg.out_dir) / "metrics.jsonl", mode);
        if (!csv || !jsonl) throw IoError("cannot open metrics files in " + cfg.out_dir);
        if (start_epoch == 0) csv << kMetricsCsvHeader << "\n";
    }

    const Normalizer norm = cfg.normalize == "dataset" ? Normalizer::from_dataset(train_set)
                                                       : Normalizer::fixed_range();
    auto params = model.params();
    std::int64_t step = start_step;
    std::vector<MetricsRecord> records;

    for (std::int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        BatchOptions opts;
        opts.batch_size = cfg.batch_size;
        opts.shuffle = true;
        opts.augment = cfg.augment;
        opts.norm = norm;
        BatchStream stream(train_set, opts, cfg.seed, epoch);
        double loss_sum = 0.0;
        std::int64_t hits = 0, seen = 0, batch_index = 0;
        Batch batch;
        while (stream.next(batch)) {
            StepContext ctx{Mode::kTrain, cfg.seed, step};
            Tensor logits = model.forward(batch.x, ctx);
            auto res = softmax_crossentropy(logits, batch.y);
            if (!std::isfinite(res.loss)) {
                throw NumericError("non-finite loss " + std::to_string(res.loss) + " at epoch " +
                                   std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batch_index));
            }
            const auto pred = argmax_rows(logits);
            for (std::size_t i = 0; i < batch.y.size(); ++i) {
                if (pred[i] == batch.y[i]) ++hits;
            }
            loss_sum += res.loss * static_cast<double>(batch.y.size());
            seen += static_cast<std::int64_t>(batch.y.size());
            model.backward(res.dlogits);
            adam.step(params);
            ++step;
            ++batch_index;
        }

        const EvalResult ev = evaluate(model, test_set, cfg.batch_size, norm);
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        MetricsRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.train_acc = static_cast<double>(hits) / static_cast<double>(seen);
        rec.test_loss = ev.loss;
        rec.test_acc = ev.accuracy;
        rec.seconds = cfg.deterministic ? 0.0 : elapsed;
        records.push_back(rec);

        if (writing) {
            csv << format_metrics_csv_row(rec) << "\n";
            jsonl << format_metrics_json_row(rec) << "\n";
            csv.flush();
            jsonl.flush();
            CheckpointMeta meta{cfg.variant, epoch + 1, cfg.seed, step};
            save_checkpoint((fs::path(cfg.out_dir) / "checkpoint_latest.cnnf").string(), model, &adam,
                            meta);
        }
        std::fprintf(stderr,
                     "epoch %" PRId64 "/%" PRId64
                     "  train_loss=%.4f train_acc=%.4f test_loss=%.4f test_acc=%.4f (%.1fs)\n",
                     epoch + 1, cfg.epochs, rec.train_loss, rec.train_acc, rec.test_loss, rec.test_acc,
                     elapsed);

        if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
    }

    if (writing) {
        CheckpointMeta meta{cfg.variant, records.empty() ? start_epoch : records.back().epoch, cfg.seed,
                            step};
        save_checkpoint((fs::path(cfg.out_dir) / "checkpoint_final.cnnf").string(), model, &adam, meta);
    }
    return records;
}

// ---- checkpoint serialization -----------------------------------------
//
// Layout (all integers little-endian):
//   "CNNF"  u16 version=1
//   u32 variant_len, variant bytes
//   u32 epoch   u64 seed   u64 step   u8 has_adam
//   tensor table: params     (u32 count; per tensor: u32 name_len, name,
//                             u32 rank, u64 extents[rank], f32 values[n])
//   tensor table: BN running statistics
//   if has_adam: u64 t, tensor table m, tensor table v
// Every stream of this format is a pure function of the saved state, so a
// byte-compare of two checkpoints is a state compare.

namespace {

class Writer {
public:
    explicit Writer(const std::string& path) : f_(path, std::ios::binary | std::ios::trunc), path_(path) {
        if (!f_) throw IoError("cannot open for writing: " + path);
    }

    void bytes(const void* p, std::size_t n) { f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void tensor_table(const std::vector<std::pair<std::string, const Tensor*>>& entries) {
        u32(static_cast<std::uint32_t>(entries.size()));
        for (const auto& [name, t] : entries) {
            str(name);
            u32(static_cast<std::uint32_t>(t->rank()));
            for (int d = 0; d < t->rank(); ++d) u64(static_cast<std::uint64_t>(t->dim(d)));
            if constexpr (std::endian::native == std::endian::little) {
                bytes(t->data(), static_cast<std::size_t>(t->size()) * sizeof(float));
            } else {
                for (std::int64_t i = 0; i < t->size(); ++i) u32(std::bit_cast<std::uint32_t>((*t)[i]));
            }
        }
    }

    void close() {
        f_.flush();
        if (!f_) throw IoError("write failed: " + path_);
    }

private:
    template <typename U>
    void put_le(U v) {
        std::uint8_t buf[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(buf, sizeof(U));
    }

    std::ofstream f_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : f_(path, std::ios::binary), path_(path) {
        if (!f_) throw IoError("not found: " + path);
    }

    std::int64_t offset() const { return offset_; }

    void bytes(void* p, std::size_t n) {
        f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(f_.gcount()) != n) {
            throw FormatError(path_ + ": truncated at offset " + std::to_string(offset_));
        }
        offset_ += static_cast<std::int64_t>(n);
    }

    std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
    std::uint16_t u16() { return get_le<std::uint16_t>(); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }

    std::string str(std::uint32_t max_len = 4096) {
        const std::uint32_t n = u32();
        if (n > max_len) {
            throw FormatError(path_ + ": unreasonable string length " + std::to_string(n) +
                              " at offset " + std::to_string(offset_ - 4));
        }
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }

    Tensor tensor(std::string* name_out) {
        *name_out = str();
        const std::uint32_t rank = u32();
        if (rank < 1 || rank > 8) {
            throw FormatError(path_ + ": tensor '" + *name_out + "' has rank " + std::to_string(rank) +
                              " at offset " + std::to_string(offset_ - 4));
        }
        Shape shape(rank);
        std::int64_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::int64_t>(u64());
            if (shape[d] < 1 || shape[d] > (std::int64_t(1) << 32) || count > (std::int64_t(1) << 33)) {
                throw FormatError(path_ + ": tensor '" + *name_out + "' has invalid extents at offset " +
                                  std::to_string(offset_));
            }
            count *= shape[d];
        }
        Tensor t(shape);
        if constexpr (std::endian::native == std::endian::little) {
            bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
        } else {
            for (std::int64_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(u32());
        }
        return t;
    }

    const std::string& path() const { return path_; }

private:
    template <typename U>
    U get_le() {
        std::uint8_t buf[sizeof(U)];
        bytes(buf, sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
        return v;
    }

    std::ifstream f_;
    std::string path_;
    std::int64_t offset_ = 0;
};

constexpr char kMagic[4] = {'C', 'N', 'N', 'F'};
constexpr std::uint16_t kVersion = 1;

CheckpointMeta read_header(Reader& r) {
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(r.path() + ": bad magic bytes at offset 0");
    }
    const std::uint16_t version = r.u16();
    if (version != kVersion) {
        throw FormatError(r.path() + ": unsupported version " + std::to_string(version) +
                          " at offset 4");
    }
    CheckpointMeta meta;
    meta.variant = r.str();
    meta.epoch = static_cast<std::int64_t>(r.u32());
    meta.seed = r.u64();
    meta.step = static_cast<std::int64_t>(r.u64());
    return meta;
}

void load_table_into(Reader& r, const std::vector<ParamRef>& slots, const char* what) {
    const std::uint32_t count = r.u32();
    if (count != slots.size()) {
        throw FormatError(r.path() + ": " + what + " table has " + std::to_string(count) +
                          " tensors, model expects " + std::to_string(slots.size()));
    }
    for (const auto& slot : slots) {
        std::string name;
        Tensor t = r.tensor(&name);
        if (name != slot.name) {
            throw FormatError(r.path() + ": expected tensor '" + slot.name + "', found '" + name + "'");
        }
        if (t.shape() != slot.value->shape()) {
            throw FormatError(r.path() + ": tensor '" + name + "' has shape " + shape_str(t.shape()) +
                              ", model expects " + shape_str(slot.value->shape()));
        }
        *slot.value = std::move(t);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const AdamState* adam,
                     const CheckpointMeta& meta) {
    // Write to a sibling temp file first so an interrupted save never leaves
    // a half-written checkpoint at the target path.
    const std::string tmp = path + ".tmp";
    {
        Writer w(tmp);
        w.bytes(kMagic, 4);
        w.u16(kVersion);
        w.str(meta.variant);
        w.u32(static_cast<std::uint32_t>(meta.epoch));
        w.u64(meta.seed);
        w.u64(static_cast<std::uint64_t>(meta.step));
        w.u8(adam ? 1 : 0);
        std::vector<std::pair<std::string, const Tensor*>> entries;
        for (auto& p : model.params()) entries.emplace_back(p.name, p.value);
        w.tensor_table(entries);
        entries.clear();
        for (auto& s : model.state_tensors()) entries.emplace_back(s.name, s.value);
        w.tensor_table(entries);
        if (adam) {
            w.u64(static_cast<std::uint64_t>(adam->t()));
            const auto params = model.params();
            // A fresh optimizer (no step yet) stores zero moments.
            std::vector<Tensor> zeros;
            if (adam->first_moments().empty()) {
                zeros.reserve(params.size());
                for (auto& p : params) zeros.emplace_back(p.value->shape());
            }
            auto write_moments = [&](const char* suffix, const std::vector<Tensor>& moments) {
                const std::vector<Tensor>& src = moments.empty() ? zeros : moments;
                if (src.size() != params.size()) {
                    throw StateError("optimizer state does not match the model's parameter list");
                }
                entries.clear();
                for (std::size_t i = 0; i < params.size(); ++i) {
                    entries.emplace_back(params[i].name + suffix, &src[i]);
                }
                w.tensor_table(entries);
            };
            write_moments(".m", adam->first_moments());
            write_moments(".v", adam->second_moments());
        }
        w.close();
    }
    std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    Reader r(path);
    return read_header(r);
}

CheckpointMeta load_checkpoint(const std::string& path, Model& model, AdamState* adam) {
    Reader r(path);
    CheckpointMeta meta = read_header(r);
    const bool has_adam = r.u8() != 0;
    load_table_into(r, model.params(), "parameter");
    load_table_into(r, model.state_tensors(), "state");
    if (adam) {
        if (!has_adam) {
            throw FormatError(path + ": checkpoint carries no optimizer state");
        }
        const auto t = static_cast<std::int64_t>(r.u64());
        const auto params = model.params();
        auto read_moments = [&](const char* suffix) {
            const std::uint32_t count = r.u32();
            if (count != params.size()) {
                throw FormatError(path + ": moment table has " + std::to_string(count) +
                                  " tensors, model expects " + std::to_string(params.size()));
            }
            std::vector<Tensor> out;
            out.reserve(params.size());
            for (const auto& p : params) {
                std::string name;
                Tensor tens = r.tensor(&name);
                if (name != p.name + suffix) {
                    throw FormatError(path + ": expected tensor '" + p.name + suffix + "', found '" +
                                      name + "'");
                }
                if (tens.shape() != p.value->shape()) {
                    throw FormatError(path + ": moment tensor '" + name + "' shape mismatch");
                }
                out.push_back(std::move(tens));
            }
            return out;
        };
        auto m = read_moments(".m");
        auto v = read_moments(".v");
        adam->restore(t, std::move(m), std::move(v));
    }
    return meta;
}

// ---- gradient checking ------------------------------------------------

GradCheckReport gradient_check_model(ModelT<double>& model, const TensorT<double>& x,
                                     const std::vector<std::int64_t>& labels, const StepContext& ctx,
                                     double eps) {
    auto loss_at = [&](const TensorT<double>& input) {
        TensorT<double> logits = model.forward(input, ctx);
        return softmax_crossentropy(logits, labels).loss;
    };

    // Analytic pass.
    TensorT<double> logits = model.forward(x, ctx);
    auto res = softmax_crossentropy(logits, labels);
    TensorT<double> input_grad = model.backward(res.dlogits);
    auto params = model.params();
    std::vector<TensorT<double>> grads;
    grads.reserve(params.size());
    for (auto& p : params) grads.push_back(*p.grad);

    GradCheckReport report;
    auto probe = [&](const std::string& tensor_name, TensorT<double>* value,
                     const TensorT<double>& analytic, const TensorT<double>* input_override) {
        GradCheckEntry entry;
        entry.tensor = tensor_name;
        for (std::int64_t i = 0; i < value->size(); ++i) {
            const double saved = (*value)[i];
            (*value)[i] = saved + eps;
            const double up = loss_at(input_override ? *input_override : x);
            (*value)[i] = saved - eps;
            const double down = loss_at(input_override ? *input_override : x);
            (*value)[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        if (entry.max_rel_err > report.worst) {
            report.worst = entry.max_rel_err;
            report.worst_tensor = entry.tensor;
        }
        report.entries.push_back(std::move(entry));
    };

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        probe(params[pi].name, params[pi].value, grads[pi], nullptr);
    }
    TensorT<double> x_mut = x;
    probe("input", &x_mut, input_grad, &x_mut);
    return report;
}

ModelConfig miniature_config() {
    ModelConfig config;
    config.blocks = {{1, 4}, {1, 6}};
    config.fc_hidden = 16;
    config.input_dim = 8;
    return config;
}

GradCheckReport gradient_check(const ModelConfig& config, std::uint64_t seed, double eps) {
    ModelT<double> model = build_model_t<double>(config, seed);
    Rng rng = make_stream(seed, Stream::kSynth, 12345);
    TensorT<double> x(Shape{2, config.input_channels, config.input_dim, config.input_dim});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.next_double() * 2.0 - 1.0;
    std::vector<std::int64_t> labels(2);
    for (auto& l : labels) l = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint32_t>(config.classes)));
    StepContext ctx{Mode::kTrain, seed, 0};
    return gradient_check_model(model, x, labels, ctx, eps);
}

}  // namespace cnnf
