#include "evsplat/io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace evsplat {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- little-endian POD buffers ------------------------------------------

struct BufWriter {
    std::string bytes;
    template <typename T>
    void pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        bytes.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void raw(const void* p, size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    }
};

struct BufReader {
    const std::string& bytes;
    size_t pos = 0;
    explicit BufReader(const std::string& b) : bytes(b) {}
    template <typename T>
    T pod() {
        T v;
        raw(&v, sizeof(T));
        return v;
    }
    void raw(void* p, size_t n) {
        if (pos + n > bytes.size())
            throw IoError(IoErrc::truncated, "unexpected end of file");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
};

void write_doubles(BufWriter& w, const double* p, size_t n) {
    w.raw(p, n * sizeof(double));
}
void read_doubles(BufReader& r, double* p, size_t n) {
    r.raw(p, n * sizeof(double));
}

void write_adam(BufWriter& w, Adam& a) {
    w.pod<int64_t>(a.steps());
    w.pod<uint64_t>(a.m().size());
    write_doubles(w, a.m().data(), a.m().size());
    write_doubles(w, a.v().data(), a.v().size());
}

void read_adam(BufReader& r, Adam& a) {
    const int64_t steps = r.pod<int64_t>();
    const uint64_t n = r.pod<uint64_t>();
    a = Adam(n);
    read_doubles(r, a.m().data(), n);
    read_doubles(r, a.v().data(), n);
    a.set_steps(steps);
}

}  // namespace

// ---- sRGB -----------------------------------------------------------------

double srgb_encode(double linear) {
    if (linear <= 0.0031308) return 12.92 * linear;
    return 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

double srgb_decode(double srgb) {
    if (srgb <= 0.04045) return srgb / 12.92;
    return std::pow((srgb + 0.055) / 1.055, 2.4);
}

uint8_t to_srgb8(double linear) {
    const double e = srgb_encode(std::clamp(linear, 0.0, 1.0));
    return static_cast<uint8_t>(std::lround(e * 255.0));
}

double from_srgb8(uint8_t v) { return srgb_decode(v / 255.0); }

std::string error_json(const std::exception& e) {
    json j;
    j["error"] = e.what();
    if (const auto* io = dynamic_cast<const IoError*>(&e))
        j["code"] = static_cast<int>(io->code);
    else
        j["code"] = 1;
    return j.dump();
}

// ---- files ------------------------------------------------------------------

void atomic_write(const fs::path& path, const std::string& bytes) {
    fs::create_directories(path.parent_path().empty() ? "."
                                                      : path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError(IoErrc::missing_file,
                               "cannot open for writing: " + tmp.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError(IoErrc::truncated,
                               "short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError(IoErrc::missing_file, "missing file: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---- EVS1 -------------------------------------------------------------------

void write_events(const fs::path& path, const EventStream& ev) {
    BufWriter w;
    w.raw("EVS1", 4);
    w.pod<uint32_t>(static_cast<uint32_t>(ev.width));
    w.pod<uint32_t>(static_cast<uint32_t>(ev.height));
    w.pod<uint64_t>(ev.events.size());
    for (const Event& e : ev.events) {
        w.pod<double>(e.t);
        w.pod<uint16_t>(e.x);
        w.pod<uint16_t>(e.y);
        w.pod<int8_t>(e.p);
    }
    atomic_write(path, w.bytes);
}

EventStream read_events(const fs::path& path) {
    const std::string bytes = read_file(path);
    BufReader r(bytes);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "EVS1", 4) != 0)
        throw IoError(IoErrc::bad_magic, "not an EVS1 file: " + path.string());
    EventStream ev;
    ev.width = static_cast<int>(r.pod<uint32_t>());
    ev.height = static_cast<int>(r.pod<uint32_t>());
    const uint64_t n = r.pod<uint64_t>();
    ev.events.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        ev.events[i].t = r.pod<double>();
        ev.events[i].x = r.pod<uint16_t>();
        ev.events[i].y = r.pod<uint16_t>();
        ev.events[i].p = r.pod<int8_t>();
    }
    ev.validate();
    return ev;
}

// ---- threshold field --------------------------------------------------------

void write_threshold_field(const fs::path& path, const ThresholdField& f) {
    std::ostringstream header;
    header.precision(17);
    header << "EVTHR1 " << f.bins << ' ' << f.width << ' ' << f.height << ' '
           << f.t_start << ' ' << f.t_end << '\n';
    BufWriter w;
    w.raw(header.str().data(), header.str().size());
    for (double v : f.values) w.pod<float>(static_cast<float>(v));
    atomic_write(path, w.bytes);
}

ThresholdField read_threshold_field(const fs::path& path) {
    const std::string bytes = read_file(path);
    const size_t nl = bytes.find('\n');
    if (nl == std::string::npos)
        throw IoError(IoErrc::bad_header, "threshold field: missing header");
    std::istringstream header(bytes.substr(0, nl));
    std::string magic;
    ThresholdField f;
    header >> magic >> f.bins >> f.width >> f.height >> f.t_start >> f.t_end;
    if (magic != "EVTHR1" || !header)
        throw IoError(IoErrc::bad_magic, "not a threshold field file");
    if (f.bins <= 0 || f.width <= 0 || f.height <= 0)
        throw IoError(IoErrc::bad_header, "threshold field: bad dimensions");
    const size_t n =
        static_cast<size_t>(f.bins) * 2 * f.width * f.height;
    if (bytes.size() - nl - 1 != n * sizeof(float))
        throw IoError(IoErrc::truncated, "threshold field: size mismatch");
    f.values.resize(n);
    const char* p = bytes.data() + nl + 1;
    for (size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, p + i * sizeof(float), sizeof(float));
        if (!(v > 0.0f))
            throw IoError(IoErrc::bad_value, "threshold field: nonpositive");
        f.values[i] = v;
    }
    return f;
}

// ---- PNG --------------------------------------------------------------------

void write_png(const fs::path& path, const Image& img) {
    if (img.channels != 3)
        throw IoError(IoErrc::bad_value, "write_png expects 3 channels");
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(IoErrc::bad_value, "libpng write failure");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
            static_cast<std::string*>(png_get_io_ptr(p))
                ->append(reinterpret_cast<char*>(data), n);
        },
        [](png_structp) {});
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);  // deterministic output
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[3 * x + c] = to_srgb8(img.at(y, x, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    atomic_write(path, out);
}

Image read_png(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(
                                            bytes.data()),
                                        0, 8))
        throw IoError(IoErrc::bad_magic, "not a PNG file: " + path.string());
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(IoErrc::bad_header, "libpng read failure");
    }
    struct Cursor {
        const std::string* b;
        size_t pos;
    } cur{&bytes, 0};
    png_set_read_fn(png, &cur, [](png_structp p, png_bytep data, png_size_t n) {
        auto* c = static_cast<Cursor*>(png_get_io_ptr(p));
        if (c->pos + n > c->b->size()) png_error(p, "truncated PNG");
        std::memcpy(data, c->b->data() + c->pos, n);
        c->pos += n;
    });
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Image img(w, h, 3);
    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = from_srgb8(row[3 * x + c]);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// ---- PGM --------------------------------------------------------------------

void write_pgm(const fs::path& path, const Image& gray) {
    if (gray.channels != 1)
        throw IoError(IoErrc::bad_value, "write_pgm expects 1 channel");
    std::ostringstream os;
    os << "P5\n" << gray.width << ' ' << gray.height << "\n255\n";
    std::string bytes = os.str();
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x)
            bytes.push_back(static_cast<char>(static_cast<uint8_t>(
                std::lround(std::clamp(gray.at(y, x), 0.0, 1.0) * 255.0))));
    atomic_write(path, bytes);
}

Image read_pgm(const fs::path& path) {
    const std::string bytes = read_file(path);
    std::istringstream is(bytes);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    is >> magic >> w >> h >> maxv;
    if (magic != "P5" || maxv != 255 || w <= 0 || h <= 0)
        throw IoError(IoErrc::bad_header, "not an 8-bit P5 PGM");
    is.get();  // single whitespace after header
    const size_t start = static_cast<size_t>(is.tellg());
    if (bytes.size() - start < static_cast<size_t>(w) * h)
        throw IoError(IoErrc::truncated, "PGM pixel data truncated");
    Image img(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at(y, x) =
                static_cast<uint8_t>(bytes[start + static_cast<size_t>(y) * w + x]) /
                255.0;
    return img;
}

// ---- checkpoint -------------------------------------------------------------

namespace {

std::string pack_gaussians(const GaussianCloud& cloud) {
    BufWriter w;
    w.pod<uint64_t>(cloud.size());
    for (const auto& g : cloud.gaussians) {
        write_doubles(w, g.mu.data(), 3);
        write_doubles(w, g.rot.data(), 4);
        write_doubles(w, g.log_scale.data(), 3);
        w.pod<double>(g.opacity_logit);
        write_doubles(w, g.color.data(), 3);
        w.pod<uint8_t>(static_cast<uint8_t>(g.label));
    }
    return std::move(w.bytes);
}

GaussianCloud unpack_gaussians(const std::string& bytes) {
    BufReader r(bytes);
    GaussianCloud cloud;
    const uint64_t n = r.pod<uint64_t>();
    cloud.gaussians.resize(n);
    for (auto& g : cloud.gaussians) {
        read_doubles(r, g.mu.data(), 3);
        read_doubles(r, g.rot.data(), 4);
        read_doubles(r, g.log_scale.data(), 3);
        g.opacity_logit = r.pod<double>();
        read_doubles(r, g.color.data(), 3);
        g.label = static_cast<Label>(r.pod<uint8_t>());
    }
    return cloud;
}

std::string pack_deform(const DeformationField& f) {
    BufWriter w;
    w.pod<uint32_t>(static_cast<uint32_t>(f.weights().size()));
    for (const auto& m : f.weights()) {
        w.pod<uint32_t>(static_cast<uint32_t>(m.rows()));
        w.pod<uint32_t>(static_cast<uint32_t>(m.cols()));
        write_doubles(w, m.data(), m.size());
    }
    for (const auto& b : f.biases()) {
        w.pod<uint32_t>(static_cast<uint32_t>(b.size()));
        write_doubles(w, b.data(), b.size());
    }
    return std::move(w.bytes);
}

DeformationField unpack_deform(const std::string& bytes) {
    BufReader r(bytes);
    DeformationField f;
    const uint32_t layers = r.pod<uint32_t>();
    f.weights().resize(layers);
    f.biases().resize(layers);
    for (auto& m : f.weights()) {
        const uint32_t rows = r.pod<uint32_t>(), cols = r.pod<uint32_t>();
        m.resize(rows, cols);
        read_doubles(r, m.data(), m.size());
    }
    for (auto& b : f.biases()) {
        const uint32_t n = r.pod<uint32_t>();
        b.resize(n);
        read_doubles(r, b.data(), b.size());
    }
    return f;
}

std::string pack_threshold(ThresholdParams& p) {
    BufWriter w;
    w.pod<uint32_t>(static_cast<uint32_t>(p.thr.bins));
    w.pod<uint32_t>(static_cast<uint32_t>(p.thr.width));
    w.pod<uint32_t>(static_cast<uint32_t>(p.thr.height));
    w.pod<double>(p.thr.t_start);
    w.pod<double>(p.thr.t_end);
    write_doubles(w, p.thr.values.data(), p.thr.values.size());
    write_doubles(w, p.log_thr.data(), p.log_thr.size());
    write_adam(w, p.adam);
    return std::move(w.bytes);
}

ThresholdParams unpack_threshold(const std::string& bytes) {
    BufReader r(bytes);
    ThresholdParams p;
    p.thr.bins = static_cast<int>(r.pod<uint32_t>());
    p.thr.width = static_cast<int>(r.pod<uint32_t>());
    p.thr.height = static_cast<int>(r.pod<uint32_t>());
    p.thr.t_start = r.pod<double>();
    p.thr.t_end = r.pod<double>();
    const size_t n =
        static_cast<size_t>(p.thr.bins) * 2 * p.thr.width * p.thr.height;
    p.thr.values.resize(n);
    p.log_thr.resize(n);
    read_doubles(r, p.thr.values.data(), n);
    read_doubles(r, p.log_thr.data(), n);
    read_adam(r, p.adam);
    return p;
}

std::string pack_optim(JointOptim& o) {
    BufWriter w;
    for (Adam* a : {&o.mu, &o.rot, &o.log_scale, &o.opacity, &o.color,
                    &o.deform})
        write_adam(w, *a);
    return std::move(w.bytes);
}

JointOptim unpack_optim(const std::string& bytes) {
    BufReader r(bytes);
    JointOptim o;
    for (Adam* a : {&o.mu, &o.rot, &o.log_scale, &o.opacity, &o.color,
                    &o.deform})
        read_adam(r, *a);
    return o;
}

struct Section {
    char tag[9];
    std::string payload;
};

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    // pack_* take non-const refs only to reuse Adam accessors.
    auto& m = const_cast<Checkpoint&>(ck);
    std::vector<std::pair<std::string, std::string>> sections;
    BufWriter bg;
    write_doubles(bg, m.model.background.data(), 3);
    sections.emplace_back("META    ", bg.bytes);
    sections.emplace_back("GAUSS   ", pack_gaussians(m.model.cloud));
    sections.emplace_back("DEFORM  ", pack_deform(m.model.deform));
    sections.emplace_back("THRESH  ", pack_threshold(m.model.thr));
    sections.emplace_back("OPTIM   ", pack_optim(m.optim));
    sections.emplace_back("RNG     ", m.rng_state);

    BufWriter w;
    w.raw("EVSPLAT1", 8);
    w.pod<uint32_t>(1);  // version
    w.pod<uint32_t>(static_cast<uint32_t>(sections.size()));
    uint64_t offset = 16 + sections.size() * 24;
    for (const auto& [tag, payload] : sections) {
        w.raw(tag.data(), 8);
        w.pod<uint64_t>(offset);
        w.pod<uint64_t>(payload.size());
        offset += payload.size();
    }
    for (const auto& [tag, payload] : sections) w.raw(payload.data(),
                                                      payload.size());
    atomic_write(path, w.bytes);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string bytes = read_file(path);
    BufReader r(bytes);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, "EVSPLAT1", 8) != 0)
        throw IoError(IoErrc::bad_magic, "not a checkpoint: " + path.string());
    const uint32_t version = r.pod<uint32_t>();
    if (version != 1)
        throw IoError(IoErrc::bad_header, "unsupported checkpoint version");
    const uint32_t n_sections = r.pod<uint32_t>();
    std::vector<std::pair<std::string, std::string>> sections;
    for (uint32_t i = 0; i < n_sections; ++i) {
        char tag[8];
        r.raw(tag, 8);
        const uint64_t off = r.pod<uint64_t>(), len = r.pod<uint64_t>();
        if (off + len > bytes.size())
            throw IoError(IoErrc::truncated, "checkpoint section out of range");
        sections.emplace_back(std::string(tag, 8), bytes.substr(off, len));
    }
    Checkpoint ck;
    for (const auto& [tag, payload] : sections) {
        if (tag == "META    ") {
            BufReader mr(payload);
            read_doubles(mr, ck.model.background.data(), 3);
        } else if (tag == "GAUSS   ") {
            ck.model.cloud = unpack_gaussians(payload);
        } else if (tag == "DEFORM  ") {
            ck.model.deform = unpack_deform(payload);
        } else if (tag == "THRESH  ") {
            ck.model.thr = unpack_threshold(payload);
        } else if (tag == "OPTIM   ") {
            ck.optim = unpack_optim(payload);
        } else if (tag == "RNG     ") {
            ck.rng_state = payload;
        }
    }
    return ck;
}

// ---- dataset directory --------------------------------------------------

void Dataset::validate() const {
    if (frames.size() < 2)
        throw std::invalid_argument("dataset: need at least 2 frames");
    for (size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].image.width != width || frames[i].image.height != height)
            throw std::invalid_argument("dataset: frame resolution mismatch");
        if (i > 0 && !(frames[i].cam.time > frames[i - 1].cam.time))
            throw std::invalid_argument(
                "dataset: timestamps must strictly increase");
    }
    if (events.width != width || events.height != height)
        throw std::invalid_argument("dataset: event resolution mismatch");
    events.validate();
    if (!events.events.empty()) {
        if (events.events.front().t < frames.front().cam.time ||
            events.events.back().t > frames.back().cam.time)
            throw std::invalid_argument(
                "dataset: events outside the frame time span");
    }
}

namespace {

json camera_json(const Camera& cam) {
    json pose = json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose.push_back(cam.rotation(r, c));
        pose.push_back(cam.translation[r]);
    }
    for (double v : {0.0, 0.0, 0.0, 1.0}) pose.push_back(v);
    return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
            {"pose", pose}};
}

Camera camera_from_json(const json& j, int w, int h, double time) {
    Camera cam;
    cam.fx = j.at("fx");
    cam.fy = j.at("fy");
    cam.cx = j.at("cx");
    cam.cy = j.at("cy");
    const auto& pose = j.at("pose");
    if (pose.size() != 16)
        throw IoError(IoErrc::bad_manifest, "camera pose must be 4x4");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.rotation(r, c) = pose[4 * r + c];
        cam.translation[r] = pose[4 * r + 3];
    }
    cam.width = w;
    cam.height = h;
    cam.time = time;
    return cam;
}

json frame_entry(const fs::path& dir, const std::string& rel,
                 const FrameSample& f) {
    write_png(dir / rel, f.image);
    return {{"file", rel}, {"time", f.cam.time}, {"exposure", f.exposure},
            {"camera", camera_json(f.cam)}};
}

FrameSample frame_from_json(const fs::path& dir, const json& j, int w, int h) {
    FrameSample f;
    const std::string rel = j.at("file");
    if (!fs::exists(dir / rel))
        throw IoError(IoErrc::missing_frame, "missing frame: " + rel);
    f.image = read_png(dir / rel);
    f.exposure = j.value("exposure", 0.0);
    f.cam = camera_from_json(j.at("camera"), w, h, j.at("time"));
    if (f.image.width != w || f.image.height != h)
        throw IoError(IoErrc::resolution_mismatch,
                      "frame resolution mismatch: " + rel);
    return f;
}

}  // namespace

void save_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "heldout");
    json manifest;
    manifest["width"] = ds.width;
    manifest["height"] = ds.height;
    manifest["bbox_min"] = {ds.bbox_min.x(), ds.bbox_min.y(), ds.bbox_min.z()};
    manifest["bbox_max"] = {ds.bbox_max.x(), ds.bbox_max.y(), ds.bbox_max.z()};
    manifest["frames"] = json::array();
    char name[64];
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "frames/frame_%04zu.png", i);
        manifest["frames"].push_back(frame_entry(dir, name, ds.frames[i]));
    }
    manifest["heldout"] = json::array();
    for (size_t i = 0; i < ds.heldout.size(); ++i) {
        std::snprintf(name, sizeof(name), "heldout/held_%04zu.png", i);
        manifest["heldout"].push_back(frame_entry(dir, name, ds.heldout[i]));
    }
    write_events(dir / "events.evs1", ds.events);
    manifest["events"] = "events.evs1";
    if (ds.gt_thresholds) {
        write_threshold_field(dir / "thresholds.thr", *ds.gt_thresholds);
        manifest["gt_thresholds"] = "thresholds.thr";
    }
    if (!ds.gt_masks.empty()) {
        fs::create_directories(dir / "masks");
        manifest["gt_masks"] = json::array();
        for (size_t i = 0; i < ds.gt_masks.size(); ++i) {
            std::snprintf(name, sizeof(name), "masks/mask_%04zu.pgm", i);
            write_pgm(dir / name, ds.gt_masks[i]);
            manifest["gt_masks"].push_back(name);
        }
    }
    atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json"))
        throw IoError(IoErrc::missing_file,
                      "missing manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
        throw IoError(IoErrc::bad_manifest,
                      std::string("manifest parse error: ") + e.what());
    }
    Dataset ds;
    try {
        ds.width = manifest.at("width");
        ds.height = manifest.at("height");
        for (int c = 0; c < 3; ++c) {
            ds.bbox_min[c] = manifest.at("bbox_min")[c];
            ds.bbox_max[c] = manifest.at("bbox_max")[c];
        }
        for (const auto& j : manifest.at("frames"))
            ds.frames.push_back(frame_from_json(dir, j, ds.width, ds.height));
        for (const auto& j : manifest.value("heldout", json::array()))
            ds.heldout.push_back(frame_from_json(dir, j, ds.width, ds.height));
        ds.events =
            read_events(dir / manifest.at("events").get<std::string>());
        if (manifest.contains("gt_thresholds"))
            ds.gt_thresholds = read_threshold_field(
                dir / manifest["gt_thresholds"].get<std::string>());
        for (const auto& j : manifest.value("gt_masks", json::array()))
            ds.gt_masks.push_back(read_pgm(dir / j.get<std::string>()));
    } catch (const json::exception& e) {
        throw IoError(IoErrc::bad_manifest,
                      std::string("manifest field error: ") + e.what());
    }
    for (size_t i = 1; i < ds.frames.size(); ++i)
        if (!(ds.frames[i].cam.time > ds.frames[i - 1].cam.time))
            throw IoError(IoErrc::nonmonotonic_timestamps,
                          "frame timestamps must strictly increase");
    if (!ds.events.events.empty() && !ds.frames.empty() &&
        (ds.events.events.front().t < ds.frames.front().cam.time ||
         ds.events.events.back().t > ds.frames.back().cam.time))
        throw IoError(IoErrc::event_span_gap,
                      "events outside the frame time span");
    if (ds.events.width != ds.width || ds.events.height != ds.height)
        throw IoError(IoErrc::resolution_mismatch,
                      "event resolution mismatch");
    return ds;
}

}  // namespace evsplat
