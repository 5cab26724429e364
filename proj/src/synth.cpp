#include "flens/synth.hpp"

#include <algorithm>
#include <cmath>

#include "flens/rng.hpp"

namespace flens::data {

namespace {

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// coverage of a signed distance with ~1.5px soft edge
double edge(double d) { return smoothstep(d / 1.5 + 0.5); }

struct Pattern {
    int64_t cls;
    double cx, cy;      // center offset in pixels
    double r;           // characteristic radius
    double angle;       // rotation
    double phase;       // stripe/checker phase
    double period;      // stripe/checker period
    double fg, bg;      // foreground/background intensity
};

double coverage(const Pattern& p, double px, double py) {
    // centered, rotated coordinates
    const double dx = px - p.cx;
    const double dy = py - p.cy;
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    const double x = ca * dx + sa * dy;
    const double y = -sa * dx + ca * dy;
    const double dist = std::sqrt(x * x + y * y);

    switch (p.cls) {
        case 0:  // filled disc
            return edge(p.r - dist);
        case 1:  // ring
            return edge(0.35 * p.r - std::fabs(dist - p.r));
        case 2:  // filled square
            return edge(p.r - std::max(std::fabs(x), std::fabs(y)));
        case 3:  // square frame
            return edge(0.3 * p.r - std::fabs(std::max(std::fabs(x), std::fabs(y)) - p.r));
        case 4: {  // horizontal stripes
            const double s = std::sin(2.0 * 3.14159265358979 * (y + p.phase) / p.period);
            return smoothstep((s + 0.2) / 0.6) * edge(1.6 * p.r - dist);
        }
        case 5: {  // vertical stripes
            const double s = std::sin(2.0 * 3.14159265358979 * (x + p.phase) / p.period);
            return smoothstep((s + 0.2) / 0.6) * edge(1.6 * p.r - dist);
        }
        case 6: {  // diagonal cross
            const double d1 = std::fabs(x - y) / std::sqrt(2.0);
            const double d2 = std::fabs(x + y) / std::sqrt(2.0);
            return edge(0.32 * p.r - std::min(d1, d2)) * edge(1.4 * p.r - dist);
        }
        case 7: {  // plus sign
            const double d = std::min(std::fabs(x), std::fabs(y));
            return edge(0.32 * p.r - d) * edge(1.2 * p.r - std::max(std::fabs(x), std::fabs(y)));
        }
        case 8: {  // checkerboard
            const double s = std::sin(2.0 * 3.14159265358979 * (x + p.phase) / p.period) *
                             std::sin(2.0 * 3.14159265358979 * (y + p.phase) / p.period);
            return smoothstep((s + 0.15) / 0.5) * edge(1.5 * p.r - dist);
        }
        case 9: {  // filled triangle (pointing up)
            const double base = p.r * 0.9;
            // signed distances to the three half-planes
            const double e1 = y + base * 0.6;                       // bottom
            const double e2 = base * 0.75 - (0.55 * x - 0.45 * y);  // right
            const double e3 = base * 0.75 - (-0.55 * x - 0.45 * y); // left
            return edge(std::min({e1, e2, e3}));
        }
        default:
            return 0.0;
    }
}

}  // namespace

Dataset make_synth_dataset(const SynthConfig& config, const std::string& split) {
    if (config.count < 1) throw InputError("make_synth_dataset: count must be >= 1");
    if (config.image_size < 8) throw InputError("make_synth_dataset: image_size must be >= 8");

    const int64_t n = config.count;
    const int64_t sz = config.image_size;
    Rng rng(mix_seed(config.seed, 0x57a9e));

    Dataset ds;
    ds.id = "synth10";
    ds.split = split;
    ds.class_count = 10;
    ds.images = Tensor({n, 1, sz, sz});
    ds.labels.resize(static_cast<size_t>(n));

    const double half = static_cast<double>(sz - 1) / 2.0;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t cls = i % 10;  // balanced classes
        Pattern p;
        p.cls = cls;
        p.cx = rng.uniform(-2.5, 2.5);
        p.cy = rng.uniform(-2.5, 2.5);
        p.r = static_cast<double>(sz) * 0.27 * rng.uniform(0.78, 1.18);
        p.angle = rng.uniform(-0.35, 0.35);
        p.period = static_cast<double>(sz) * rng.uniform(0.18, 0.26);
        p.phase = rng.uniform(0.0, p.period);
        p.fg = rng.uniform(0.55, 0.95);
        p.bg = rng.uniform(0.03, 0.14);

        double* img = ds.images.data() + i * sz * sz;
        for (int64_t y = 0; y < sz; ++y) {
            for (int64_t x = 0; x < sz; ++x) {
                const double c = coverage(p, static_cast<double>(x) - half,
                                          static_cast<double>(y) - half);
                double v = p.bg + (p.fg - p.bg) * c;
                if (config.pixel_noise > 0.0) v += rng.normal(0.0, config.pixel_noise);
                img[y * sz + x] = std::clamp(v, 0.0, 1.0);
            }
        }

        int64_t label = cls;
        if (config.label_noise > 0.0 && rng.uniform() < config.label_noise) {
            // uniformly wrong label
            label = (cls + 1 + rng.uniform_int(9)) % 10;
        }
        ds.labels[static_cast<size_t>(i)] = label;
    }
    return ds;
}

void write_synth_idx_dir(const std::string& dir, const SynthConfig& train_cfg,
                         const SynthConfig& test_cfg) {
    Dataset train = make_synth_dataset(train_cfg, "train");
    Dataset test = make_synth_dataset(test_cfg, "test");
    write_bytes(dir + "/train-images-idx3-ubyte", encode_idx_images(train));
    write_bytes(dir + "/train-labels-idx1-ubyte", encode_idx_labels(train));
    write_bytes(dir + "/t10k-images-idx3-ubyte", encode_idx_images(test));
    write_bytes(dir + "/t10k-labels-idx1-ubyte", encode_idx_labels(test));
}

}  // namespace flens::data
