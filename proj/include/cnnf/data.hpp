#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cnnf/rng.hpp"
#include "cnnf/tensor.hpp"

namespace cnnf {

// CIFAR-10 binary layout: each record is one label byte (0..9) followed by
// 3072 image bytes, channel-planar R,G,B, each plane row-major 32x32.
inline constexpr std::int64_t kImageDim = 32;
inline constexpr std::int64_t kImageChannels = 3;
inline constexpr std::int64_t kNumClasses = 10;
inline constexpr std::int64_t kImageBytes = kImageChannels * kImageDim * kImageDim;  // 3072
inline constexpr std::int64_t kRecordBytes = kImageBytes + 1;                        // 3073

enum class Split { kTrain, kTest };

struct Dataset {
    std::vector<std::uint8_t> images;  // size() * 3072, raw bytes
    std::vector<std::uint8_t> labels;  // one per image, 0..9
    Split split = Split::kTrain;

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    const std::uint8_t* image(std::int64_t i) const { return images.data() + i * kImageBytes; }
    std::uint8_t* image(std::int64_t i) { return images.data() + i * kImageBytes; }
    void truncate(std::int64_t n);
};

// Reads data_batch_1..5.bin into the train set and test_batch.bin into the
// test set. Missing files raise IoError; malformed contents raise
// FormatError.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Single-file variants, used for round-trip checks and synthetic directories.
Dataset load_cifar_file(const std::string& path, Split split);
void append_cifar_file(Dataset& into, const std::string& path);
void write_cifar_file(const std::string& path, const Dataset& ds, std::int64_t begin,
                      std::int64_t end);

// Writes a full directory in the standard layout: the train set split evenly
// across data_batch_1..5.bin plus test_batch.bin.
void write_cifar_dir(const std::string& dir, const Dataset& train, const Dataset& test);

// Per-channel affine normalization applied after augmentation:
// v = (byte/255 - mean[c]) / stddev[c].
struct Normalizer {
    float mean[3];
    float stddev[3];

    // mean 0.5, std 0.5: bytes map onto exactly [-1, 1].
    static Normalizer fixed_range();
    // Per-channel statistics measured over a dataset's bytes (in 0..1 scale).
    static Normalizer from_dataset(const Dataset& ds);
};

void normalize_image(const std::uint8_t* img, const Normalizer& norm, float* out);

// Augmentation core with forced decisions: optional horizontal mirror, then
// zero-pad by 4 on every side and crop the 32x32 window whose top-left corner
// is (row_off, col_off) in the 40x40 padded frame; offsets are in 0..8.
void augment_with(const std::uint8_t* in, bool flip, int row_off, int col_off, std::uint8_t* out);

// Random augmentation. Consumes exactly two draws: one uniform for the flip
// decision (flip when u < 0.5), then one 64-bit word whose high and low
// halves choose the row and column offsets.
void augment(const std::uint8_t* in, Rng& rng, std::uint8_t* out);

struct Batch {
    Tensor x;                           // [B,3,32,32], normalized
    std::vector<std::int64_t> y;        // labels
    std::vector<std::int64_t> indices;  // original dataset indices
};

struct BatchOptions {
    std::int64_t batch_size = 64;
    bool shuffle = true;
    bool augment = true;
    Normalizer norm = Normalizer::fixed_range();
};

// Emits one epoch of batches. The visit order is a fresh permutation per
// (seed, epoch); each sample's augmentation stream is keyed by (seed, epoch,
// original index) so batch composition never affects pixel results.
class BatchStream {
public:
    BatchStream(const Dataset& ds, const BatchOptions& opts, std::uint64_t seed, std::int64_t epoch);

    bool next(Batch& out);
    std::int64_t batch_count() const;

private:
    const Dataset* ds_;
    BatchOptions opts_;
    std::uint64_t seed_;
    std::int64_t epoch_;
    std::vector<std::int64_t> order_;
    std::int64_t cursor_ = 0;
};

// Deterministic labeled images for tests and offline smoke runs: a noisy
// background with a 16x16 square whose color identifies the class. Labels
// cycle round-robin, so any n >= 10 is class-balanced.
Dataset synthesize_dataset(std::int64_t n, std::uint64_t seed, Split split = Split::kTrain);

}  // namespace cnnf
