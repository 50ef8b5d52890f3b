#include "strack/synth.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

namespace fs = std::filesystem;

namespace strack {

void SceneConfig::validate() const {
    if (height < 8 || width < 8) throw ConfigError("scene: canvas must be at least 8x8");
    if (frames < 1) throw ConfigError("scene: frames must be >= 1");
    if (num_objects < 0) throw ConfigError("scene: num_objects must be >= 0");
    if (min_size <= 0 || min_size > max_size) throw ConfigError("scene: empty size range");
    if (max_size >= std::min(height, width))
        throw ConfigError("scene: object size " + std::to_string(max_size) +
                          " does not fit the canvas");
    if (min_speed < 0 || min_speed > max_speed) throw ConfigError("scene: empty velocity range");
    if (noise_smooth < 0) throw ConfigError("scene: noise_smooth must be >= 0");
}

namespace {

struct NoiseMap {
    int h, w;
    std::vector<double> v;  // channel-major
    int ch;

    double at(int c, int y, int x) const {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return v[(size_t(c) * h + y) * w + x];
    }
    double sample(int c, double x, double y) const {
        int x0 = int(std::floor(x)), y0 = int(std::floor(y));
        double fx = x - x0, fy = y - y0;
        return (1 - fx) * (1 - fy) * at(c, y0, x0) + fx * (1 - fy) * at(c, y0, x0 + 1) +
               (1 - fx) * fy * at(c, y0 + 1, x0) + fx * fy * at(c, y0 + 1, x0 + 1);
    }
};

NoiseMap make_noise(std::mt19937& rng, int ch, int h, int w, int smooth) {
    NoiseMap m{h, w, std::vector<double>(size_t(ch) * h * w), ch};
    std::uniform_real_distribution<double> d(0.08, 0.92);
    for (auto& x : m.v) x = d(rng);
    for (int pass = 0; pass < smooth; ++pass) {
        NoiseMap src = m;
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) acc += src.at(c, y + dy, x + dx);
                    m.v[(size_t(c) * h + y) * w + x] = acc / 9.0;
                }
    }
    return m;
}

struct SceneObject {
    bool ellipse;
    double cx, cy;  // frame-1 center
    double sw, sh;  // extents
    double vx, vy;  // px/frame
    double spin;    // rad/frame
    NoiseMap texture;

    bool inside_local(double rx, double ry) const {
        if (ellipse) {
            double a = rx / (sw / 2), b = ry / (sh / 2);
            return a * a + b * b <= 1.0;
        }
        return std::abs(rx) <= sw / 2 && std::abs(ry) <= sh / 2;
    }
    // canvas point -> local coords at time index dt (0 = reference frame)
    void to_local(double qx, double qy, int dt, double& rx, double& ry) const {
        double ang = -spin * dt;
        double dx = qx - (cx + vx * dt), dy = qy - (cy + vy * dt);
        rx = std::cos(ang) * dx - std::sin(ang) * dy;
        ry = std::sin(ang) * dx + std::cos(ang) * dy;
    }
    // local coords -> canvas point at time index dt
    void to_canvas(double rx, double ry, int dt, double& qx, double& qy) const {
        double ang = spin * dt;
        qx = cx + vx * dt + std::cos(ang) * rx - std::sin(ang) * ry;
        qy = cy + vy * dt + std::sin(ang) * rx + std::cos(ang) * ry;
    }
    double tex(int c, double rx, double ry) const {
        return texture.sample(c, rx + (texture.w - 1) / 2.0, ry + (texture.h - 1) / 2.0);
    }
};

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

SequenceRecord generate(const SceneConfig& config) {
    config.validate();
    std::mt19937 rng(config.seed);
    int H = config.height, W = config.width, T = config.frames;

    NoiseMap background = make_noise(rng, 3, H, W, config.noise_smooth);

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<SceneObject> objs;
    for (int i = 0; i < config.num_objects; ++i) {
        SceneObject o;
        o.ellipse = u01(rng) < 0.5;
        o.sw = config.min_size + u01(rng) * (config.max_size - config.min_size);
        o.sh = config.min_size + u01(rng) * (config.max_size - config.min_size);
        auto center = [&](double extent, int n) {
            double lo = extent / 2, hi = n - 1 - extent / 2;
            return lo >= hi ? (n - 1) / 2.0 : lo + u01(rng) * (hi - lo);
        };
        o.cx = center(o.sw, W);
        o.cy = center(o.sh, H);
        double ang = u01(rng) * 2 * M_PI;
        double speed = config.min_speed + u01(rng) * (config.max_speed - config.min_speed);
        o.vx = speed * std::cos(ang);
        o.vy = speed * std::sin(ang);
        o.spin = config.rotation ? (u01(rng) * 2 - 1) * config.max_spin : 0.0;
        int tw = int(std::ceil(o.sw)) + 4, th = int(std::ceil(o.sh)) + 4;
        o.texture = make_noise(rng, 3, th, tw, config.noise_smooth);
        objs.push_back(std::move(o));
    }

    // Owner layer of each reference-frame pixel; -1 = background. Later
    // objects are nearer.
    std::vector<int> owner(size_t(H) * W, -1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int i = int(objs.size()) - 1; i >= 0; --i) {
                double rx, ry;
                objs[i].to_local(x, y, 0, rx, ry);
                if (objs[i].inside_local(rx, ry)) {
                    owner[size_t(y) * W + x] = i;
                    break;
                }
            }

    SequenceRecord rec;
    rec.config = config;
    for (int t = 0; t < T; ++t) {
        Tensor img = Tensor::zeros({3, H, W}, Dtype::F32);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int top = -1;
                double rx = 0, ry = 0;
                for (int i = int(objs.size()) - 1; i >= 0; --i) {
                    double lx, ly;
                    objs[i].to_local(x, y, t, lx, ly);
                    if (objs[i].inside_local(lx, ly)) {
                        top = i;
                        rx = lx;
                        ry = ly;
                        break;
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    double v = top < 0 ? background.at(c, y, x) : objs[top].tex(c, rx, ry);
                    img.set_value_at((int64_t(c) * H + y) * W + x, quantize8(v));
                }
            }

        Tensor flow = Tensor::zeros({2, H, W}, Dtype::F32);
        Tensor vis = Tensor::zeros({1, H, W}, Dtype::F32);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int own = owner[size_t(y) * W + x];
                double qx = x, qy = y;
                if (own >= 0) {
                    double rx, ry;
                    objs[own].to_local(x, y, 0, rx, ry);
                    objs[own].to_canvas(rx, ry, t, qx, qy);
                }
                flow.set_value_at(int64_t(y) * W + x, qx - x);
                flow.set_value_at(int64_t(H) * W + int64_t(y) * W + x, qy - y);
                bool visible = qx >= 0 && qx <= W - 1 && qy >= 0 && qy <= H - 1;
                if (visible)
                    for (int j = own + 1; j < int(objs.size()) && visible; ++j) {
                        double rx, ry;
                        objs[j].to_local(qx, qy, t, rx, ry);
                        if (objs[j].inside_local(rx, ry)) visible = false;
                    }
                vis.set_value_at(int64_t(y) * W + x, visible ? 1.0 : 0.0);
            }
        rec.frames.push_back(Frame{img});
        rec.gt_flow.push_back(FlowField{flow});
        rec.gt_vis.push_back(vis);
    }
    return rec;
}

// ---- file formats ----

namespace {

void write_file_header(std::ofstream& f, const std::string& path) {
    if (!f) throw IoError("cannot open " + path + " for writing");
}

int read_pnm_int(std::istream& is) {
    int c = is.get();
    while (c == ' ' || c == '\n' || c == '\t' || c == '\r') c = is.get();
    if (c < '0' || c > '9') throw ParseError("pnm: expected integer at offset " +
                                             std::to_string(std::streamoff(is.tellg())));
    int v = 0;
    while (c >= '0' && c <= '9') {
        v = v * 10 + (c - '0');
        c = is.get();
    }
    return v;
}

}  // namespace

void write_flo(const std::string& path, const Tensor& flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2) throw ShapeError("write_flo: need 2×H×W");
    std::ofstream f(path, std::ios::binary);
    write_file_header(f, path);
    float magic = 202021.25f;
    int32_t w = flow.dim(2), h = flow.dim(1);
    f.write(reinterpret_cast<const char*>(&magic), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    int64_t hw = int64_t(h) * w;
    for (int64_t i = 0; i < hw; ++i) {
        float u = float(flow.value_at(i));
        float v = float(flow.value_at(hw + i));
        f.write(reinterpret_cast<const char*>(&u), 4);
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    if (!f) throw IoError("write_flo: short write to " + path);
}

Tensor read_flo(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_flo: cannot open " + path);
    float magic = 0;
    int32_t w = 0, h = 0;
    f.read(reinterpret_cast<char*>(&magic), 4);
    if (!f || magic != 202021.25f)
        throw ParseError("read_flo: bad magic in " + path + " at offset 0");
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    if (!f || w < 1 || h < 1 || w > (1 << 20) || h > (1 << 20))
        throw ParseError("read_flo: bad dimensions in " + path + " at offset 4");
    Tensor flow = Tensor::zeros({2, h, w}, Dtype::F32);
    int64_t hw = int64_t(h) * w;
    std::vector<float> row(2 * size_t(w));
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), int64_t(row.size()) * 4);
        if (!f)
            throw ParseError("read_flo: truncated at offset " +
                             std::to_string(12 + int64_t(y) * w * 8));
        float* u = flow.mutable_data<float>();
        for (int x = 0; x < w; ++x) {
            u[int64_t(y) * w + x] = row[2 * x];
            u[hw + int64_t(y) * w + x] = row[2 * x + 1];
        }
    }
    return flow;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ShapeError("write_ppm: need 3×H×W");
    int h = rgb.dim(1), w = rgb.dim(2);
    std::ofstream f(path, std::ios::binary);
    write_file_header(f, path);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[x * 3 + c] = uint8_t(
                    std::lround(std::clamp(rgb.value_at((int64_t(c) * h + y) * w + x), 0.0, 1.0) *
                                255.0));
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw IoError("write_ppm: short write to " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_ppm: cannot open " + path);
    char m0 = f.get(), m1 = f.get();
    if (m0 != 'P' || m1 != '6') throw ParseError("read_ppm: bad magic in " + path + " at offset 0");
    int w = read_pnm_int(f), h = read_pnm_int(f), maxv = read_pnm_int(f);
    if (maxv != 255) throw ParseError("read_ppm: unsupported maxval in " + path);
    Tensor rgb = Tensor::zeros({3, h, w}, Dtype::F32);
    float* p = rgb.mutable_data<float>();
    std::vector<uint8_t> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), row.size());
        if (!f)
            throw ParseError("read_ppm: truncated in " + path + " at offset " +
                             std::to_string(std::streamoff(f.tellg())));
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                p[(int64_t(c) * h + y) * w + x] = float(row[x * 3 + c]) / 255.0f;
    }
    return rgb;
}

void write_pgm(const std::string& path, const Tensor& gray) {
    if (gray.ndim() != 3 || gray.dim(0) != 1) throw ShapeError("write_pgm: need 1×H×W");
    int h = gray.dim(1), w = gray.dim(2);
    std::ofstream f(path, std::ios::binary);
    write_file_header(f, path);
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            row[x] = uint8_t(
                std::lround(std::clamp(gray.value_at(int64_t(y) * w + x), 0.0, 1.0) * 255.0));
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw IoError("write_pgm: short write to " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pgm: cannot open " + path);
    char m0 = f.get(), m1 = f.get();
    if (m0 != 'P' || m1 != '5') throw ParseError("read_pgm: bad magic in " + path + " at offset 0");
    int w = read_pnm_int(f), h = read_pnm_int(f), maxv = read_pnm_int(f);
    if (maxv != 255) throw ParseError("read_pgm: unsupported maxval in " + path);
    Tensor gray = Tensor::zeros({1, h, w}, Dtype::F32);
    float* p = gray.mutable_data<float>();
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), row.size());
        if (!f)
            throw ParseError("read_pgm: truncated in " + path + " at offset " +
                             std::to_string(std::streamoff(f.tellg())));
        for (int x = 0; x < w; ++x) p[int64_t(y) * w + x] = float(row[x]) / 255.0f;
    }
    return gray;
}

// ---- sequence directories ----

namespace {

std::string frame_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", i);
    return buf;
}

nlohmann::json config_to_json(const SceneConfig& c) {
    return nlohmann::json{{"height", c.height},       {"width", c.width},
                          {"frames", c.frames},       {"num_objects", c.num_objects},
                          {"min_size", c.min_size},   {"max_size", c.max_size},
                          {"min_speed", c.min_speed}, {"max_speed", c.max_speed},
                          {"rotation", c.rotation},   {"max_spin", c.max_spin},
                          {"noise_smooth", c.noise_smooth}, {"seed", c.seed}};
}

SceneConfig config_from_json(const nlohmann::json& j) {
    SceneConfig c;
    c.height = j.at("height");
    c.width = j.at("width");
    c.frames = j.at("frames");
    c.num_objects = j.at("num_objects");
    c.min_size = j.at("min_size");
    c.max_size = j.at("max_size");
    c.min_speed = j.at("min_speed");
    c.max_speed = j.at("max_speed");
    c.rotation = j.at("rotation");
    c.max_spin = j.at("max_spin");
    c.noise_smooth = j.at("noise_smooth");
    c.seed = j.at("seed");
    return c;
}

}  // namespace

void save_sequence(const SequenceRecord& rec, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "frames");
    fs::create_directories(fs::path(dir) / "flow");
    fs::create_directories(fs::path(dir) / "vis");
    for (size_t t = 0; t < rec.frames.size(); ++t) {
        std::string n = frame_name(int(t));
        write_ppm((fs::path(dir) / "frames" / (n + ".ppm")).string(), rec.frames[t].data);
        write_flo((fs::path(dir) / "flow" / (n + ".flo")).string(), rec.gt_flow[t].data);
        write_pgm((fs::path(dir) / "vis" / (n + ".pgm")).string(), rec.gt_vis[t]);
    }
    std::ofstream cfg(fs::path(dir) / "config.json");
    if (!cfg) throw IoError("save_sequence: cannot write config in " + dir);
    cfg << config_to_json(rec.config).dump(2) << "\n";
}

SequenceRecord load_sequence(const std::string& dir) {
    std::ifstream cfg(fs::path(dir) / "config.json");
    if (!cfg) throw IoError("load_sequence: missing config.json in " + dir);
    nlohmann::json j;
    try {
        cfg >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_sequence: bad config.json in " + dir + ": " + e.what());
    }
    SequenceRecord rec;
    rec.config = config_from_json(j);
    for (int t = 0; t < rec.config.frames; ++t) {
        std::string n = frame_name(t);
        rec.frames.push_back(Frame{read_ppm((fs::path(dir) / "frames" / (n + ".ppm")).string())});
        rec.gt_flow.push_back(FlowField{read_flo((fs::path(dir) / "flow" / (n + ".flo")).string())});
        rec.gt_vis.push_back(read_pgm((fs::path(dir) / "vis" / (n + ".pgm")).string()));
    }
    return rec;
}

}  // namespace strack
