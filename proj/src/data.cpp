#include "cnnf/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cnnf/error.hpp"

namespace cnnf {

void Dataset::truncate(std::int64_t n) {
    if (n < 0 || n > size()) {
        throw ValueError("truncate: count " + std::to_string(n) + " outside dataset of " +
                         std::to_string(size()));
    }
    labels.resize(static_cast<std::size_t>(n));
    images.resize(static_cast<std::size_t>(n * kImageBytes));
}

void append_cifar_file(Dataset& into, const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        throw IoError("not found: " + path);
    }
    const std::int64_t bytes = static_cast<std::int64_t>(f.tellg());
    if (bytes <= 0 || bytes % kRecordBytes != 0) {
        throw FormatError(path + ": size " + std::to_string(bytes) + " is not a positive multiple of " +
                          std::to_string(kRecordBytes));
    }
    f.seekg(0);
    const std::int64_t count = bytes / kRecordBytes;
    std::vector<std::uint8_t> record(static_cast<std::size_t>(kRecordBytes));
    into.labels.reserve(into.labels.size() + static_cast<std::size_t>(count));
    into.images.reserve(into.images.size() + static_cast<std::size_t>(count * kImageBytes));
    for (std::int64_t i = 0; i < count; ++i) {
        if (!f.read(reinterpret_cast<char*>(record.data()), kRecordBytes)) {
            throw IoError(path + ": short read at record " + std::to_string(i));
        }
        if (record[0] > 9) {
            throw FormatError(path + ": record " + std::to_string(i) + " has label byte " +
                              std::to_string(static_cast<int>(record[0])));
        }
        into.labels.push_back(record[0]);
        into.images.insert(into.images.end(), record.begin() + 1, record.end());
    }
}

Dataset load_cifar_file(const std::string& path, Split split) {
    Dataset ds;
    ds.split = split;
    append_cifar_file(ds, path);
    return ds;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw IoError("not found: directory " + dir);
    }
    Dataset train;
    train.split = Split::kTrain;
    for (int i = 1; i <= 5; ++i) {
        append_cifar_file(train, (fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    }
    Dataset test = load_cifar_file((fs::path(dir) / "test_batch.bin").string(), Split::kTest);
    return {std::move(train), std::move(test)};
}

void write_cifar_file(const std::string& path, const Dataset& ds, std::int64_t begin,
                      std::int64_t end) {
    if (begin < 0 || end > ds.size() || begin > end) {
        throw ValueError("write_cifar_file: bad range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") for dataset of " + std::to_string(ds.size()));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open for writing: " + path);
    }
    for (std::int64_t i = begin; i < end; ++i) {
        const char label = static_cast<char>(ds.labels[static_cast<std::size_t>(i)]);
        f.write(&label, 1);
        f.write(reinterpret_cast<const char*>(ds.image(i)), kImageBytes);
    }
    if (!f) {
        throw IoError("write failed: " + path);
    }
}

void write_cifar_dir(const std::string& dir, const Dataset& train, const Dataset& test) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::int64_t n = train.size();
    const std::int64_t per = (n + 4) / 5;
    for (int i = 0; i < 5; ++i) {
        const std::int64_t begin = std::min<std::int64_t>(i * per, n);
        const std::int64_t end = std::min<std::int64_t>(begin + per, n);
        write_cifar_file((fs::path(dir) / ("data_batch_" + std::to_string(i + 1) + ".bin")).string(),
                         train, begin, end);
    }
    write_cifar_file((fs::path(dir) / "test_batch.bin").string(), test, 0, test.size());
}

Normalizer Normalizer::fixed_range() {
    return Normalizer{{0.5f, 0.5f, 0.5f}, {0.5f, 0.5f, 0.5f}};
}

Normalizer Normalizer::from_dataset(const Dataset& ds) {
    if (ds.size() == 0) {
        throw ValueError("normalizer statistics need a nonempty dataset");
    }
    Normalizer norm{};
    const std::int64_t plane = kImageDim * kImageDim;
    for (std::int64_t c = 0; c < kImageChannels; ++c) {
        double sum = 0.0;
        for (std::int64_t i = 0; i < ds.size(); ++i) {
            const std::uint8_t* p = ds.image(i) + c * plane;
            for (std::int64_t j = 0; j < plane; ++j) sum += static_cast<double>(p[j]) / 255.0;
        }
        const double count = static_cast<double>(ds.size() * plane);
        const double mean = sum / count;
        double sq = 0.0;
        for (std::int64_t i = 0; i < ds.size(); ++i) {
            const std::uint8_t* p = ds.image(i) + c * plane;
            for (std::int64_t j = 0; j < plane; ++j) {
                const double d = static_cast<double>(p[j]) / 255.0 - mean;
                sq += d * d;
            }
        }
        double stddev = std::sqrt(sq / count);
        if (stddev < 1e-6) stddev = 1e-6;
        norm.mean[c] = static_cast<float>(mean);
        norm.stddev[c] = static_cast<float>(stddev);
    }
    return norm;
}

void normalize_image(const std::uint8_t* img, const Normalizer& norm, float* out) {
    const std::int64_t plane = kImageDim * kImageDim;
    for (std::int64_t c = 0; c < kImageChannels; ++c) {
        const float mean = norm.mean[c];
        const float inv = 1.0f / norm.stddev[c];
        for (std::int64_t j = 0; j < plane; ++j) {
            out[c * plane + j] = (static_cast<float>(img[c * plane + j]) / 255.0f - mean) * inv;
        }
    }
}

void augment_with(const std::uint8_t* in, bool flip, int row_off, int col_off, std::uint8_t* out) {
    if (row_off < 0 || row_off > 8 || col_off < 0 || col_off > 8) {
        throw ValueError("crop offsets must lie in 0..8");
    }
    const std::int64_t d = kImageDim;
    for (std::int64_t c = 0; c < kImageChannels; ++c) {
        const std::uint8_t* src = in + c * d * d;
        std::uint8_t* dst = out + c * d * d;
        for (std::int64_t r = 0; r < d; ++r) {
            // Position (r, ck) of the output window maps to (r + row_off - 4,
            // ck + col_off - 4) in the unpadded image; outside -> zero fill.
            const std::int64_t sr = r + row_off - 4;
            for (std::int64_t ck = 0; ck < d; ++ck) {
                std::int64_t sc = ck + col_off - 4;
                std::uint8_t v = 0;
                if (sr >= 0 && sr < d && sc >= 0 && sc < d) {
                    const std::int64_t col = flip ? (d - 1 - sc) : sc;
                    v = src[sr * d + col];
                }
                dst[r * d + ck] = v;
            }
        }
    }
}

void augment(const std::uint8_t* in, Rng& rng, std::uint8_t* out) {
    const bool flip = rng.next_double() < 0.5;
    const std::uint64_t word = rng.next_u64();
    const int row_off = static_cast<int>(((word >> 32) * 9ull) >> 32);
    const int col_off = static_cast<int>(((word & 0xFFFFFFFFull) * 9ull) >> 32);
    augment_with(in, flip, row_off, col_off, out);
}

BatchStream::BatchStream(const Dataset& ds, const BatchOptions& opts, std::uint64_t seed,
                         std::int64_t epoch)
    : ds_(&ds), opts_(opts), seed_(seed), epoch_(epoch) {
    if (ds.size() == 0) {
        throw ValueError("cannot batch an empty dataset");
    }
    if (opts.batch_size < 1) {
        throw ValueError("batch size must be >= 1");
    }
    if (opts_.shuffle) {
        Rng rng = make_stream(seed_, Stream::kShuffle, static_cast<std::uint64_t>(epoch_));
        order_ = rng_permutation(rng, ds.size());
    } else {
        order_.resize(static_cast<std::size_t>(ds.size()));
        for (std::int64_t i = 0; i < ds.size(); ++i) order_[static_cast<std::size_t>(i)] = i;
    }
}

std::int64_t BatchStream::batch_count() const {
    return (ds_->size() + opts_.batch_size - 1) / opts_.batch_size;
}

bool BatchStream::next(Batch& out) {
    const std::int64_t n = ds_->size();
    if (cursor_ >= n) return false;
    const std::int64_t b = std::min(opts_.batch_size, n - cursor_);
    out.x = Tensor(Shape{b, kImageChannels, kImageDim, kImageDim});
    out.y.resize(static_cast<std::size_t>(b));
    out.indices.resize(static_cast<std::size_t>(b));
    std::vector<std::uint8_t> scratch(static_cast<std::size_t>(kImageBytes));
    for (std::int64_t i = 0; i < b; ++i) {
        const std::int64_t idx = order_[static_cast<std::size_t>(cursor_ + i)];
        out.indices[static_cast<std::size_t>(i)] = idx;
        out.y[static_cast<std::size_t>(i)] = ds_->labels[static_cast<std::size_t>(idx)];
        const std::uint8_t* img = ds_->image(idx);
        if (opts_.augment) {
            Rng rng = make_stream(seed_, Stream::kAugment, static_cast<std::uint64_t>(epoch_),
                                  static_cast<std::uint64_t>(idx));
            augment(img, rng, scratch.data());
            img = scratch.data();
        }
        normalize_image(img, opts_.norm, out.x.data() + i * kImageBytes);
    }
    cursor_ += b;
    return true;
}

Dataset synthesize_dataset(std::int64_t n, std::uint64_t seed, Split split) {
    if (n < 1) {
        throw ValueError("synthetic dataset needs n >= 1");
    }
    // One distinctive color per class; the 16x16 square dominates the image,
    // so class is recoverable from pixels alone.
    static const std::uint8_t palette[10][3] = {
        {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},   {245, 130, 48},
        {145, 30, 180}, {70, 240, 240},  {240, 50, 230}, {210, 245, 60},  {0, 0, 128},
    };
    Dataset ds;
    ds.split = split;
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.images.resize(static_cast<std::size_t>(n * kImageBytes));
    const std::int64_t d = kImageDim, plane = d * d;
    for (std::int64_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % kNumClasses);
        ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(cls);
        Rng rng = make_stream(seed, Stream::kSynth, static_cast<std::uint64_t>(i));
        std::uint8_t* img = ds.image(i);
        for (std::int64_t j = 0; j < kImageBytes; ++j) {
            img[j] = static_cast<std::uint8_t>(rng.next_below(256));
        }
        const int k = static_cast<int>(rng.next_below(9));
        const std::int64_t top = 2 + 5 * (k % 3);
        const std::int64_t left = 2 + 5 * (k / 3);
        for (std::int64_t c = 0; c < kImageChannels; ++c) {
            for (std::int64_t r = top; r < top + 16; ++r) {
                for (std::int64_t ck = left; ck < left + 16; ++ck) {
                    const int noise = static_cast<int>(rng.next_below(21)) - 10;
                    const int v = static_cast<int>(palette[cls][c]) + noise;
                    img[c * plane + r * d + ck] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
                }
            }
        }
    }
    return ds;
}

}  // namespace cnnf
