#include "cnnf/viz.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cnnf/error.hpp"

namespace cnnf {

MetricsSeries read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("not found: " + path);
    MetricsSeries series;
    series.label = std::filesystem::path(path).stem().string();
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != kMetricsCsvHeader) {
                throw FormatError(path + ": line 1: expected header '" + kMetricsCsvHeader + "'");
            }
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 6) {
            throw FormatError(path + ": line " + std::to_string(line_no) + ": expected 6 fields, got " +
                              std::to_string(fields.size()));
        }
        MetricsRecord rec;
        try {
            std::size_t used = 0;
            rec.epoch = std::stoll(fields[0], &used);
            if (used != fields[0].size()) throw std::invalid_argument(fields[0]);
            auto num = [&](const std::string& s) {
                std::size_t u = 0;
                const double v = std::stod(s, &u);
                if (u != s.size()) throw std::invalid_argument(s);
                return v;
            };
            rec.train_loss = num(fields[1]);
            rec.train_acc = num(fields[2]);
            rec.test_loss = num(fields[3]);
            rec.test_acc = num(fields[4]);
            rec.seconds = num(fields[5]);
        } catch (const std::exception&) {
            throw FormatError(path + ": line " + std::to_string(line_no) + ": unparsable value");
        }
        series.records.push_back(rec);
    }
    if (series.records.empty()) {
        throw FormatError(path + ": no data rows");
    }
    return series;
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr int kPaletteSize = 8;

struct PanelRect {
    double x0, y0, x1, y1;  // plot area corners (y0 = top)
};

void append(std::string& out, const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    out += buf;
}

// Draws one panel: frame, ticks, grid, series polylines.
void render_panel(std::string& out, const PanelRect& r, const std::string& title,
                  const std::string& y_label, const std::vector<MetricsSeries>& series,
                  double value_of(const MetricsRecord&), double ymin, double ymax,
                  std::int64_t max_epoch, const char* ytick_fmt) {
    append(out, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"white\" "
                "stroke=\"#333333\"/>\n",
           r.x0, r.y0, r.x1 - r.x0, r.y1 - r.y0);
    append(out, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-size=\"15\" "
                "font-family=\"sans-serif\">%s</text>\n",
           (r.x0 + r.x1) / 2.0, r.y0 - 12.0, title.c_str());
    append(out, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-size=\"12\" "
                "font-family=\"sans-serif\">epoch</text>\n",
           (r.x0 + r.x1) / 2.0, r.y1 + 34.0);
    append(out, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-size=\"12\" "
                "font-family=\"sans-serif\" transform=\"rotate(-90 %.2f %.2f)\">%s</text>\n",
           r.x0 - 42.0, (r.y0 + r.y1) / 2.0, r.x0 - 42.0, (r.y0 + r.y1) / 2.0, y_label.c_str());

    auto xpos = [&](std::int64_t epoch) {
        if (max_epoch <= 1) return (r.x0 + r.x1) / 2.0;
        return r.x0 + (r.x1 - r.x0) * static_cast<double>(epoch - 1) / static_cast<double>(max_epoch - 1);
    };
    auto ypos = [&](double v) {
        const double t = (v - ymin) / (ymax - ymin);
        return r.y1 - (r.y1 - r.y0) * t;
    };

    const std::int64_t xstep = max_epoch <= 15 ? 1 : (max_epoch + 9) / 10;
    for (std::int64_t e = 1; e <= max_epoch; e += xstep) {
        const double x = xpos(e);
        append(out, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#cccccc\"/>\n", x,
               r.y0, x, r.y1);
        append(out, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-size=\"11\" "
                    "font-family=\"sans-serif\">%" PRId64 "</text>\n",
               x, r.y1 + 16.0, e);
    }
    for (int i = 0; i <= 5; ++i) {
        const double v = ymin + (ymax - ymin) * static_cast<double>(i) / 5.0;
        const double y = ypos(v);
        append(out, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#cccccc\"/>\n", r.x0,
               y, r.x1, y);
        std::string fmt = std::string("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\" "
                                      "font-size=\"11\" font-family=\"sans-serif\">") +
                          ytick_fmt + "</text>\n";
        append(out, fmt.c_str(), r.x0 - 6.0, y + 4.0, v);
    }

    for (std::size_t s = 0; s < series.size(); ++s) {
        std::string points;
        for (const auto& rec : series[s].records) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", xpos(rec.epoch), ypos(value_of(rec)));
            points += buf;
        }
        if (!points.empty()) points.pop_back();
        append(out, "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"2\" points=\"%s\"/>\n",
               kPalette[s % kPaletteSize], points.c_str());
    }
}

}  // namespace

std::string render_comparison_svg(const std::vector<MetricsSeries>& series) {
    if (series.empty()) throw ValueError("no metrics series to plot");
    std::int64_t max_epoch = 1;
    double max_loss = 0.0;
    for (const auto& s : series) {
        if (s.records.empty()) throw ValueError("series '" + s.label + "' has no records");
        for (const auto& r : s.records) {
            max_epoch = std::max(max_epoch, r.epoch);
            max_loss = std::max(max_loss, std::max(r.train_loss, 0.0));
        }
    }
    if (max_loss <= 0.0) max_loss = 1.0;
    max_loss *= 1.05;

    const double legend_rows = static_cast<double>((series.size() + 3) / 4);
    const double height = 430.0 + 20.0 * legend_rows;
    std::string out;
    append(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"%.0f\" "
                "viewBox=\"0 0 960 %.0f\">\n",
           height, height);
    append(out, "<rect x=\"0\" y=\"0\" width=\"960\" height=\"%.0f\" fill=\"white\"/>\n", height);

    const PanelRect loss_rect{70.0, 40.0, 450.0, 360.0};
    const PanelRect acc_rect{550.0, 40.0, 930.0, 360.0};
    render_panel(out, loss_rect, "Training Loss", "loss", series,
                 [](const MetricsRecord& r) { return r.train_loss; }, 0.0, max_loss, max_epoch, "%.2f");
    render_panel(out, acc_rect, "Test Accuracy", "accuracy", series,
                 [](const MetricsRecord& r) { return r.test_acc; }, 0.0, 1.0, max_epoch, "%.1f");

    for (std::size_t s = 0; s < series.size(); ++s) {
        const double lx = 70.0 + 220.0 * static_cast<double>(s % 4);
        const double ly = 408.0 + 20.0 * static_cast<double>(s / 4);
        append(out, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" "
                    "stroke-width=\"3\"/>\n",
               lx, ly, lx + 26.0, ly, kPalette[s % kPaletteSize]);
        append(out, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" font-family=\"sans-serif\">%s"
                    "</text>\n",
               lx + 32.0, ly + 4.0, series[s].label.c_str());
    }
    out += "</svg>\n";
    return out;
}

std::vector<std::string> dump_activation_grids(Model& model, const Tensor& image,
                                               const std::string& out_dir) {
    if (image.rank() != 4 || image.dim(0) != 1) {
        throw ShapeError("activation dump expects a single [1,C,H,W] image, got " +
                         shape_str(image.shape()));
    }
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    StepContext ctx;
    ctx.mode = Mode::kEval;
    std::vector<std::pair<std::string, Tensor>> taps;
    model.forward_traced(image, ctx, taps);

    std::vector<std::string> written;
    for (const auto& [name, act] : taps) {
        // Convolutional ReLU outputs only: rank-4 activation maps.
        if (act.rank() != 4 || name.rfind("relu_conv", 0) != 0) continue;
        const std::int64_t c = act.dim(1), h = act.dim(2), w = act.dim(3);
        const auto cols = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(c))));
        const std::int64_t rows = (c + cols - 1) / cols;
        std::vector<std::uint8_t> canvas(static_cast<std::size_t>(rows * h * cols * w), 0);
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const float* plane = act.data() + ci * h * w;
            float lo = plane[0], hi = plane[0];
            for (std::int64_t i = 1; i < h * w; ++i) {
                lo = std::min(lo, plane[i]);
                hi = std::max(hi, plane[i]);
            }
            const std::int64_t tile_r = ci / cols, tile_c = ci % cols;
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    std::uint8_t v = 128;  // constant channel: mid gray
                    if (hi > lo) {
                        v = static_cast<std::uint8_t>(
                            std::lround(255.0 * (plane[y * w + x] - lo) / (hi - lo)));
                    }
                    canvas[static_cast<std::size_t>((tile_r * h + y) * (cols * w) + tile_c * w + x)] = v;
                }
            }
        }
        const std::string path = (fs::path(out_dir) / (name + ".pgm")).string();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + path);
        f << "P5\n" << cols * w << " " << rows * h << "\n255\n";
        f.write(reinterpret_cast<const char*>(canvas.data()),
                static_cast<std::streamsize>(canvas.size()));
        if (!f) throw IoError("write failed: " + path);
        written.push_back(path);
    }
    return written;
}

}  // namespace cnnf
