#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evsplat/dataset.hpp"
#include "evsplat/io.hpp"
#include "testutil.hpp"

using namespace evsplat;
namespace fs = std::filesystem;
namespace tu = evsplat::testutil;

namespace {

// Fresh scratch directory per test run.
fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / "evsplat_io_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

EventStream random_events(Rng& rng, int n, int w, int h) {
    EventStream ev;
    ev.width = w;
    ev.height = h;
    double t = 0.0;
    for (int i = 0; i < n; ++i) {
        t += rng.uniform(0.0, 0.01);
        ev.events.push_back({t, static_cast<uint16_t>(rng.uniform(0, w)),
                             static_cast<uint16_t>(rng.uniform(0, h)),
                             static_cast<int8_t>(rng.uniform() < 0.5 ? 1 : -1)});
    }
    return ev;
}

ThresholdField random_field(Rng& rng, int bins, int w, int h) {
    ThresholdField f;
    f.bins = bins;
    f.width = w;
    f.height = h;
    f.t_start = 0.0;
    f.t_end = 1.0;
    f.values.resize(static_cast<size_t>(bins) * 2 * w * h);
    for (double& v : f.values) v = rng.uniform(0.05, 0.4);
    return f;
}

JointModel random_model(Rng& rng, int n_gauss) {
    JointModel m;
    m.cloud = tu::random_cloud(rng, n_gauss);
    for (size_t i = 0; i < m.cloud.size(); ++i)
        m.cloud.gaussians[i].label = i % 2 ? Label::Dynamic : Label::Static;
    m.deform = DeformationField(2, 16, rng);
    m.thr = ThresholdParams::from_field(random_field(rng, 4, 8, 8));
    m.background = Vec3(0.1, 0.2, 0.3);
    return m;
}

}  // namespace

TEST_CASE("srgb transfer round-trips all 8-bit codes exactly") {
    for (int v = 0; v < 256; ++v)
        CHECK(to_srgb8(from_srgb8(static_cast<uint8_t>(v))) == v);
}

TEST_CASE("srgb encode/decode are mutual inverses in [0,1]") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform();
        CHECK(tu::rel_err(srgb_decode(srgb_encode(x)), x) < 1e-12);
        CHECK(tu::rel_err(srgb_encode(srgb_decode(x)), x) < 1e-12);
    }
    CHECK(srgb_encode(0.0) == 0.0);
    CHECK(srgb_encode(1.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("atomic_write leaves no temp files and overwrites") {
    const fs::path dir = scratch_dir();
    const fs::path p = dir / "a.bin";
    atomic_write(p, "hello");
    CHECK(read_file(p) == "hello");
    atomic_write(p, "world");
    CHECK(read_file(p) == "world");
    int entries = 0;
    for (auto& e : fs::directory_iterator(dir)) {
        (void)e;
        ++entries;
    }
    CHECK(entries == 1);
}

TEST_CASE("EVS1 events round-trip exactly and deterministically") {
    Rng rng(5);
    const EventStream ev = random_events(rng, 500, 33, 21);
    const fs::path dir = scratch_dir();
    write_events(dir / "e.evs", ev);
    const EventStream back = read_events(dir / "e.evs");
    REQUIRE(back.events.size() == ev.events.size());
    CHECK(back.width == ev.width);
    CHECK(back.height == ev.height);
    for (size_t i = 0; i < ev.events.size(); ++i) {
        CHECK(back.events[i].t == ev.events[i].t);
        CHECK(back.events[i].x == ev.events[i].x);
        CHECK(back.events[i].y == ev.events[i].y);
        CHECK(back.events[i].p == ev.events[i].p);
    }
    write_events(dir / "e2.evs", ev);
    CHECK(read_file(dir / "e.evs") == read_file(dir / "e2.evs"));
}

TEST_CASE("EVS1 loader rejects corruption with distinct codes") {
    Rng rng(6);
    const EventStream ev = random_events(rng, 50, 8, 8);
    const fs::path dir = scratch_dir();
    const fs::path p = dir / "e.evs";
    write_events(p, ev);

    SUBCASE("missing file") {
        try {
            read_events(dir / "nope.evs");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoErrc::missing_file);
        }
    }
    SUBCASE("bad magic") {
        std::string bytes = read_file(p);
        bytes[0] = 'X';
        atomic_write(p, bytes);
        try {
            read_events(p);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoErrc::bad_magic);
        }
    }
    SUBCASE("truncated payload") {
        std::string bytes = read_file(p);
        bytes.resize(bytes.size() - 7);
        atomic_write(p, bytes);
        try {
            read_events(p);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoErrc::truncated);
        }
    }
}

TEST_CASE("threshold field round-trips at f32 precision") {
    Rng rng(7);
    const ThresholdField f = random_field(rng, 3, 9, 5);
    const fs::path dir = scratch_dir();
    write_threshold_field(dir / "thr.bin", f);
    const ThresholdField back = read_threshold_field(dir / "thr.bin");
    CHECK(back.bins == f.bins);
    CHECK(back.width == f.width);
    CHECK(back.height == f.height);
    CHECK(back.t_start == f.t_start);
    CHECK(back.t_end == f.t_end);
    REQUIRE(back.values.size() == f.values.size());
    for (size_t i = 0; i < f.values.size(); ++i)
        CHECK(back.values[i] == static_cast<double>(static_cast<float>(f.values[i])));
}

TEST_CASE("PNG round-trips 8-bit-quantized linear images exactly") {
    Rng rng(8);
    Image img = tu::random_image(rng, 13, 9, 3);
    for (double& v : img.data) v = from_srgb8(to_srgb8(v));  // representable
    const fs::path dir = scratch_dir();
    write_png(dir / "f.png", img);
    const Image back = read_png(dir / "f.png");
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    REQUIRE(back.channels == 3);
    for (size_t i = 0; i < img.size(); ++i) CHECK(back.data[i] == img.data[i]);
    write_png(dir / "f2.png", img);
    CHECK(read_file(dir / "f.png") == read_file(dir / "f2.png"));
}

TEST_CASE("PGM round-trips binary masks exactly") {
    Rng rng(9);
    Image mask(11, 7, 1);
    for (double& v : mask.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const fs::path dir = scratch_dir();
    write_pgm(dir / "m.pgm", mask);
    const Image back = read_pgm(dir / "m.pgm");
    REQUIRE(back.width == mask.width);
    REQUIRE(back.height == mask.height);
    for (size_t i = 0; i < mask.size(); ++i) CHECK(back.data[i] == mask.data[i]);
}

TEST_CASE("checkpoint round-trips bit-exactly and re-saves byte-identically") {
    Rng rng(10);
    Checkpoint ck;
    ck.model = random_model(rng, 17);
    ck.optim.init(ck.model);
    // Touch optimizer state so non-trivial moments are serialized.
    {
        std::vector<double> p(ck.model.cloud.size() * 3, 0.0), g(p.size(), 0.5);
        ck.optim.mu.step(p, g, 1e-3);
    }
    ck.rng_state = "some rng stream state";
    const fs::path dir = scratch_dir();
    save_checkpoint(dir / "ck.bin", ck);
    const Checkpoint back = load_checkpoint(dir / "ck.bin");

    REQUIRE(back.model.cloud.size() == ck.model.cloud.size());
    for (size_t i = 0; i < ck.model.cloud.size(); ++i) {
        const Gaussian3D& a = ck.model.cloud.gaussians[i];
        const Gaussian3D& b = back.model.cloud.gaussians[i];
        CHECK(a.label == b.label);
        for (int k = 0; k < 3; ++k) {
            CHECK(a.mu[k] == b.mu[k]);
            CHECK(a.log_scale[k] == b.log_scale[k]);
            CHECK(a.color[k] == b.color[k]);
        }
        for (int k = 0; k < 4; ++k) CHECK(a.rot[k] == b.rot[k]);
        CHECK(a.opacity_logit == b.opacity_logit);
    }
    REQUIRE(back.model.thr.thr.values.size() == ck.model.thr.thr.values.size());
    for (size_t i = 0; i < ck.model.thr.thr.values.size(); ++i) {
        CHECK(back.model.thr.thr.values[i] == ck.model.thr.thr.values[i]);
        CHECK(back.model.thr.log_thr[i] == ck.model.thr.log_thr[i]);
    }
    for (int k = 0; k < 3; ++k)
        CHECK(back.model.background[k] == ck.model.background[k]);
    // Deformation MLP: identical evaluation implies identical weights.
    Rng probe_rng(11);
    for (int i = 0; i < 5; ++i) {
        const Vec3 mu(probe_rng.uniform(-1, 1), probe_rng.uniform(-1, 1),
                      probe_rng.uniform(1.5, 2.5));
        const double t = probe_rng.uniform();
        const Eigen::VectorXd ya = ck.model.deform.evaluate(mu, t);
        const Eigen::VectorXd yb = back.model.deform.evaluate(mu, t);
        REQUIRE(ya.size() == yb.size());
        for (int k = 0; k < ya.size(); ++k) CHECK(ya[k] == yb[k]);
    }
    Checkpoint ck2 = back;  // non-const access to optimizer state
    Checkpoint ck_orig = ck;
    CHECK(ck2.optim.mu.steps() == ck_orig.optim.mu.steps());
    CHECK(ck2.optim.mu.m() == ck_orig.optim.mu.m());
    CHECK(ck2.optim.mu.v() == ck_orig.optim.mu.v());
    CHECK(back.rng_state == ck.rng_state);

    save_checkpoint(dir / "ck2.bin", back);
    CHECK(read_file(dir / "ck.bin") == read_file(dir / "ck2.bin"));
}

TEST_CASE("checkpoint loader reports bad magic") {
    Rng rng(12);
    Checkpoint ck;
    ck.model = random_model(rng, 3);
    ck.optim.init(ck.model);
    const fs::path dir = scratch_dir();
    save_checkpoint(dir / "ck.bin", ck);
    std::string bytes = read_file(dir / "ck.bin");
    bytes[2] = '?';
    atomic_write(dir / "ck.bin", bytes);
    try {
        load_checkpoint(dir / "ck.bin");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.code == IoErrc::bad_magic);
    }
}

TEST_CASE("dataset save/load round-trips structure and events") {
    ToySceneConfig sc;
    sc.width = 16;
    sc.height = 16;
    sc.n_frames = 4;
    sc.n_heldout = 2;
    sc.substeps = 4;
    sc.seed = 13;
    const Dataset ds = make_toy_scene(sc);
    const fs::path dir = scratch_dir() / "ds";
    save_dataset(dir, ds);
    const Dataset back = load_dataset(dir);

    CHECK(back.width == ds.width);
    CHECK(back.height == ds.height);
    REQUIRE(back.frames.size() == ds.frames.size());
    REQUIRE(back.heldout.size() == ds.heldout.size());
    REQUIRE(back.events.events.size() == ds.events.events.size());
    for (size_t i = 0; i < ds.events.events.size(); ++i)
        CHECK(back.events.events[i].t == ds.events.events[i].t);
    REQUIRE(back.gt_thresholds.has_value());
    CHECK(back.gt_thresholds->bins == ds.gt_thresholds->bins);
    REQUIRE(back.gt_masks.size() == ds.gt_masks.size());
    for (size_t i = 0; i < ds.gt_masks.size(); ++i)
        for (size_t q = 0; q < ds.gt_masks[i].size(); ++q)
            CHECK(back.gt_masks[i].data[q] == ds.gt_masks[i].data[q]);
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        CHECK(back.frames[i].cam.time == ds.frames[i].cam.time);
        CHECK(back.frames[i].cam.fx == ds.frames[i].cam.fx);
        // PNG quantization: within half an 8-bit sRGB step.
        for (size_t q = 0; q < ds.frames[i].image.size(); ++q) {
            const double a = ds.frames[i].image.data[q];
            const double b = back.frames[i].image.data[q];
            CHECK(std::abs(srgb_encode(a) - srgb_encode(b)) <= 0.5 / 255.0 + 1e-12);
        }
    }
    for (int k = 0; k < 3; ++k) {
        CHECK(back.bbox_min[k] == ds.bbox_min[k]);
        CHECK(back.bbox_max[k] == ds.bbox_max[k]);
    }
}

TEST_CASE("dataset loader validation errors carry distinct codes") {
    ToySceneConfig sc;
    sc.width = 8;
    sc.height = 8;
    sc.n_frames = 3;
    sc.substeps = 2;
    sc.seed = 14;
    const Dataset ds = make_toy_scene(sc);
    const fs::path root = scratch_dir();

    SUBCASE("missing manifest") {
        try {
            load_dataset(root / "absent");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoErrc::missing_file);
        }
    }
    SUBCASE("malformed manifest json") {
        const fs::path dir = root / "ds";
        save_dataset(dir, ds);
        atomic_write(dir / "manifest.json", "{not json");
        try {
            load_dataset(dir);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoErrc::bad_manifest);
        }
    }
    SUBCASE("missing frame file") {
        const fs::path dir = root / "ds2";
        save_dataset(dir, ds);
        for (auto& e : fs::recursive_directory_iterator(dir))
            if (e.path().extension() == ".png") {
                fs::remove(e.path());
                break;
            }
        try {
            load_dataset(dir);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoErrc::missing_frame);
        }
    }
}

TEST_CASE("error_json is machine readable") {
    const IoError e(IoErrc::bad_magic, "bad magic in file");
    const std::string j = error_json(e);
    CHECK(j.find("\"code\"") != std::string::npos);
    CHECK(j.find("3") != std::string::npos);
    CHECK(j.find("bad magic in file") != std::string::npos);
}
