#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "evsplat/dataset.hpp"
#include "evsplat/gtjm.hpp"

namespace evsplat {

// sRGB transfer functions; 8-bit values round-trip exactly.
double srgb_encode(double linear);
double srgb_decode(double srgb);
uint8_t to_srgb8(double linear);
double from_srgb8(uint8_t v);

enum class IoErrc : int {
    missing_file = 2,
    bad_magic = 3,
    bad_header = 4,
    truncated = 5,
    bad_manifest = 6,
    missing_frame = 7,
    nonmonotonic_timestamps = 8,
    event_span_gap = 9,
    resolution_mismatch = 10,
    bad_value = 11,
};

struct IoError : std::runtime_error {
    IoErrc code;
    IoError(IoErrc c, const std::string& msg)
        : std::runtime_error(msg), code(c) {}
};

// Serialize as a machine-readable JSON error object.
std::string error_json(const std::exception& e);

// Write-temp-then-rename; never leaves a partial file at `path`.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// EVS1 binary event container.
void write_events(const std::filesystem::path& path, const EventStream& ev);
EventStream read_events(const std::filesystem::path& path);

// Threshold field: one ASCII header line, then f32 little-endian values.
void write_threshold_field(const std::filesystem::path& path,
                           const ThresholdField& f);
ThresholdField read_threshold_field(const std::filesystem::path& path);

// 8-bit RGB PNG; linear values are sRGB-encoded on write and linearized on
// load. Output bytes are deterministic.
void write_png(const std::filesystem::path& path, const Image& linear_rgb);
Image read_png(const std::filesystem::path& path);

// Binary PGM (P5) for masks and grayscale maps in [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& gray);
Image read_pgm(const std::filesystem::path& path);

// Versioned checkpoint container: magic "EVSPLAT1", section table of
// (tag, offset, length).
struct Checkpoint {
    JointModel model;
    JointOptim optim;
    std::string rng_state;  // serialized engine stream, may be empty
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Dataset directory: manifest.json + PNG frames + EVS1 events + optional
// threshold field and PGM masks.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace evsplat
