#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace coda {

// Dense row-major image buffer, values in double precision.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data; // height * width * channels

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return data.size(); }
};

std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t seed = 0);

// Little-endian binary stream helpers. All throw FormatError on short reads.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64_array(std::ostream& os, const double* data, std::size_t n);
void write_string(std::ostream& os, const std::string& s);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
void read_f64_array(std::istream& is, double* data, std::size_t n);
std::string read_string(std::istream& is);

// 8-bit binary PPM (P6). Values are clamped to [0,1] and quantized on write;
// read returns doubles in [0,1].
void write_ppm(const std::string& path, const Image& rgb);
Image read_ppm(const std::string& path);

// Raw float plane dump: 16-byte header (magic "C4DI", u32 height, width,
// channels), then little-endian f32 data.
void write_raw_image(const std::string& path, const Image& img);
Image read_raw_image(const std::string& path);

// Flat "key = value" config text. '#' starts a comment, blank lines are
// ignored. Duplicate keys are allowed (ordered); lookup helpers take the
// last occurrence.
struct KeyValueFile {
    std::vector<std::pair<std::string, std::string>> entries;

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::vector<std::string> all(const std::string& key) const;
};

KeyValueFile parse_kv_text(const std::string& text, const std::string& origin);
KeyValueFile parse_kv_file(const std::string& path);

double parse_double(const std::string& s, const std::string& what);
long parse_long(const std::string& s, const std::string& what);
bool parse_bool(const std::string& s, const std::string& what);
std::vector<double> parse_double_list(const std::string& s, const std::string& what);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Deterministic float formatting for CSV/log output (shortest round-trip).
std::string format_double(double v);

} // namespace coda
