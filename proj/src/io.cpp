#include "coda/io.hpp"
#include "coda/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coda {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k)
            c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

} // namespace

std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t seed) {
    static const auto table = make_crc_table();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i)
        c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64_array(std::ostream& os, const double* data, std::size_t n) {
    // Assumes IEEE-754 little-endian host, which this project targets.
    os.write(reinterpret_cast<const char*>(data),
             static_cast<std::streamsize>(n * sizeof(double)));
}

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated file: expected 4 bytes");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("truncated file: expected 8 bytes");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void read_f64_array(std::istream& is, double* data, std::size_t n) {
    if (!is.read(reinterpret_cast<char*>(data),
                 static_cast<std::streamsize>(n * sizeof(double))))
        throw FormatError("truncated file: expected " + std::to_string(n) + " doubles");
}

std::string read_string(std::istream& is) {
    std::uint64_t len = read_u64(is);
    if (len > (1ull << 32))
        throw FormatError("implausible string length " + std::to_string(len));
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), static_cast<std::streamsize>(len)))
        throw FormatError("truncated file: expected string of " + std::to_string(len) + " bytes");
    return s;
}

void write_ppm(const std::string& path, const Image& rgb) {
    if (rgb.channels != 3) throw ShapeError("write_ppm: image must have 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(rgb.width) * 3);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(rgb.at(y, x, c), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw FormatError("short write: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw FormatError("not a P6 PPM: " + path);
    auto next_token = [&is, &path]() {
        std::string tok;
        // Skip whitespace and '#' comment lines between header tokens.
        for (;;) {
            int ch = is.peek();
            if (ch == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(ch)) {
                is.get();
            } else {
                break;
            }
        }
        is >> tok;
        if (tok.empty()) throw FormatError("truncated PPM header: " + path);
        return tok;
    };
    int w = static_cast<int>(parse_long(next_token(), "ppm width"));
    int h = static_cast<int>(parse_long(next_token(), "ppm height"));
    int maxval = static_cast<int>(parse_long(next_token(), "ppm maxval"));
    if (maxval != 255) throw FormatError("unsupported PPM maxval: " + std::to_string(maxval));
    is.get(); // single whitespace after maxval
    Image img(w, h, 3);
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size())))
        throw FormatError("truncated PPM payload: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
        img.data[i] = static_cast<double>(buf[i]) / 255.0;
    return img;
}

void write_raw_image(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write("C4DI", 4);
    write_u32(os, static_cast<std::uint32_t>(img.height));
    write_u32(os, static_cast<std::uint32_t>(img.width));
    write_u32(os, static_cast<std::uint32_t>(img.channels));
    std::vector<float> f(img.data.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(img.data[i]);
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(f.size() * sizeof(float)));
    if (!os) throw FormatError("short write: " + path);
}

Image read_raw_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated raw image header: " + path);
    if (std::memcmp(magic, "C4DI", 4) != 0)
        throw FormatError("bad magic at offset 0 (expected C4DI): " + path);
    int h = static_cast<int>(read_u32(is));
    int w = static_cast<int>(read_u32(is));
    int c = static_cast<int>(read_u32(is));
    if (h <= 0 || w <= 0 || c <= 0 || static_cast<long long>(h) * w * c > (1ll << 31))
        throw FormatError("implausible raw image dims: " + path);
    Image img(w, h, c);
    std::vector<float> f(img.data.size());
    if (!is.read(reinterpret_cast<char*>(f.data()),
                 static_cast<std::streamsize>(f.size() * sizeof(float))))
        throw FormatError("truncated raw image payload: " + path);
    for (std::size_t i = 0; i < f.size(); ++i) img.data[i] = static_cast<double>(f[i]);
    return img;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

bool KeyValueFile::has(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return true;
    return false;
}

const std::string& KeyValueFile::get(const std::string& key) const {
    const std::string* found = nullptr;
    for (const auto& [k, v] : entries)
        if (k == key) found = &v;
    if (!found) throw ConfigError("missing required key: " + key);
    return *found;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

std::vector<std::string> KeyValueFile::all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries)
        if (k == key) out.push_back(v);
    return out;
}

KeyValueFile parse_kv_text(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv.entries.emplace_back(std::move(key), std::move(val));
    }
    return kv;
}

KeyValueFile parse_kv_file(const std::string& path) {
    return parse_kv_text(read_text_file(path), path);
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("cannot parse " + what + " from '" + s + "'");
    }
}

long parse_long(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("cannot parse " + what + " from '" + s + "'");
    }
}

bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("cannot parse " + what + " from '" + s + "'");
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::string tok;
    std::istringstream is(s);
    while (std::getline(is, tok, ',')) out.push_back(parse_double(trim(tok), what));
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw FormatError("short write: " + path);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace coda
