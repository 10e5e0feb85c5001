#pragma once

// NRRD (NRRD0004) reader/writer for 3D scalar images.
//
// Written files carry an attached little-endian raw payload. Intensity and
// probability images are stored as float, masks as uint8 (0/1). The grid is
// described with "space dimension", "space directions" (orientation columns
// scaled by spacing) and "space origin".

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "segbench/grid.hpp"

namespace segbench::nrrd {

/// Optional observer notified with the path of every file opened for reading.
/// The study pipeline uses it to audit which cases a stage touched.
using ReadObserver = std::function<void(const std::filesystem::path&)>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<double> parse_numbers(const std::string& s, const std::string& field) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ParseError("nrrd: malformed number '" + tok + "' in field '" + field + "'");
        }
    }
    return out;
}

/// Parses "(a,b,c) (d,e,f) ..." into vectors; "none" entries are rejected.
inline std::vector<Vec3> parse_vectors(const std::string& s, const std::string& field) {
    std::vector<Vec3> out;
    std::size_t pos = 0;
    while (true) {
        pos = s.find_first_not_of(" \t", pos);
        if (pos == std::string::npos) break;
        if (s[pos] != '(') throw ParseError("nrrd: expected '(' in field '" + field + "'");
        const auto close = s.find(')', pos);
        if (close == std::string::npos) throw ParseError("nrrd: unterminated vector in field '" + field + "'");
        std::string inner = s.substr(pos + 1, close - pos - 1);
        for (auto& c : inner)
            if (c == ',') c = ' ';
        const auto nums = parse_numbers(inner, field);
        if (nums.size() != 3) throw ParseError("nrrd: vectors in field '" + field + "' must have 3 components");
        out.emplace_back(nums[0], nums[1], nums[2]);
        pos = close + 1;
    }
    return out;
}

enum class Scalar { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

inline Scalar parse_type(const std::string& t) {
    const std::string s = lower(t);
    if (s == "float") return Scalar::float32;
    if (s == "double") return Scalar::float64;
    if (s == "uchar" || s == "unsigned char" || s == "uint8" || s == "uint8_t") return Scalar::uint8;
    if (s == "signed char" || s == "int8" || s == "int8_t") return Scalar::int8;
    if (s == "short" || s == "short int" || s == "signed short" || s == "signed short int" || s == "int16" ||
        s == "int16_t")
        return Scalar::int16;
    if (s == "ushort" || s == "unsigned short" || s == "unsigned short int" || s == "uint16" || s == "uint16_t")
        return Scalar::uint16;
    if (s == "int" || s == "signed int" || s == "int32" || s == "int32_t") return Scalar::int32;
    if (s == "uint" || s == "unsigned int" || s == "uint32" || s == "uint32_t") return Scalar::uint32;
    throw ParseError("nrrd: unsupported type '" + t + "'");
}

inline std::size_t scalar_size(Scalar s) {
    switch (s) {
        case Scalar::int8:
        case Scalar::uint8: return 1;
        case Scalar::int16:
        case Scalar::uint16: return 2;
        case Scalar::int32:
        case Scalar::uint32:
        case Scalar::float32: return 4;
        case Scalar::float64: return 8;
    }
    return 0;
}

template <class T>
T load(const unsigned char* p, bool swap) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if (swap) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline double decode(const unsigned char* p, Scalar s, bool swap) {
    switch (s) {
        case Scalar::int8: return load<std::int8_t>(p, false);
        case Scalar::uint8: return load<std::uint8_t>(p, false);
        case Scalar::int16: return load<std::int16_t>(p, swap);
        case Scalar::uint16: return load<std::uint16_t>(p, swap);
        case Scalar::int32: return load<std::int32_t>(p, swap);
        case Scalar::uint32: return load<std::uint32_t>(p, swap);
        case Scalar::float32: return load<float>(p, swap);
        case Scalar::float64: return load<double>(p, swap);
    }
    return 0.0;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

struct Header {
    Grid grid;
    detail::Scalar type = detail::Scalar::float32;
    bool big_endian = false;
};

/// Parses the header and leaves `in` positioned at the first payload byte.
inline Header read_header(std::istream& in) {
    using namespace detail;
    std::string line;
    if (!std::getline(in, line) || line.rfind("NRRD000", 0) != 0)
        throw ParseError("nrrd: missing NRRD magic line");
    std::map<std::string, std::string> fields;
    bool terminated = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            terminated = true;
            break;
        }
        if (line[0] == '#') continue;
        if (line.find(":=") != std::string::npos) continue;  // key/value pairs
        const auto colon = line.find(": ");
        if (colon == std::string::npos) throw ParseError("nrrd: malformed header line '" + line + "'");
        fields[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 2));
    }
    if (!terminated) throw ParseError("nrrd: header not terminated by a blank line");

    auto get = [&](const std::string& k) -> const std::string* {
        auto it = fields.find(k);
        return it == fields.end() ? nullptr : &it->second;
    };
    for (const char* req : {"type", "dimension", "sizes", "encoding"})
        if (!get(req)) throw ParseError(std::string("nrrd: missing required field '") + req + "'");
    if (get("data file") || get("datafile")) throw ParseError("nrrd: detached data files are not supported");
    if (lower(*get("encoding")) != "raw") throw ParseError("nrrd: unsupported encoding '" + *get("encoding") + "'");
    if (trim(*get("dimension")) != "3") throw ParseError("nrrd: only 3-dimensional images are supported");
    if (auto* bs = get("byte skip"); bs && trim(*bs) != "0") throw ParseError("nrrd: byte skip is not supported");

    Header h;
    h.type = parse_type(*get("type"));
    if (auto* e = get("endian")) {
        const auto en = lower(*e);
        if (en == "big") h.big_endian = true;
        else if (en != "little") throw ParseError("nrrd: unknown endian '" + *e + "'");
    } else if (scalar_size(h.type) > 1) {
        throw ParseError("nrrd: multi-byte type requires an endian field");
    }

    const auto sizes = parse_numbers(*get("sizes"), "sizes");
    if (sizes.size() != 3) throw ParseError("nrrd: sizes must list 3 values");
    Index3 dims{};
    for (int a = 0; a < 3; ++a) {
        if (sizes[a] < 1 || sizes[a] != std::floor(sizes[a])) throw ParseError("nrrd: sizes must be positive integers");
        dims[a] = static_cast<std::int64_t>(sizes[a]);
    }

    Vec3 spacing = Vec3::Ones();
    Mat3 orientation = Mat3::Identity();
    Vec3 origin = Vec3::Zero();
    if (auto* sd = get("space directions")) {
        const auto dirs = parse_vectors(*sd, "space directions");
        if (dirs.size() != 3) throw ParseError("nrrd: space directions must list 3 vectors");
        for (int a = 0; a < 3; ++a) {
            spacing[a] = dirs[a].norm();
            if (!(spacing[a] > 0.0)) throw ParseError("nrrd: zero-length space direction");
            orientation.col(a) = dirs[a] / spacing[a];
        }
        if (!is_rotation(orientation, 1e-5))
            throw ParseError("nrrd: space directions are not an orthogonal right-handed frame");
    } else if (auto* sp = get("spacings")) {
        const auto s = parse_numbers(*sp, "spacings");
        if (s.size() != 3) throw ParseError("nrrd: spacings must list 3 values");
        for (int a = 0; a < 3; ++a) {
            if (!(s[a] > 0.0)) throw ParseError("nrrd: spacings must be positive");
            spacing[a] = s[a];
        }
    }
    if (auto* so = get("space origin")) {
        const auto o = parse_vectors(*so, "space origin");
        if (o.size() != 1) throw ParseError("nrrd: space origin must be a single vector");
        origin = o[0];
    }
    try {
        h.grid = Grid(dims, spacing, origin, orientation);
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("nrrd: invalid geometry: ") + e.what());
    }
    return h;
}

/// Reads any supported scalar type, converting to float.
inline Image<float> read_image(const std::filesystem::path& path, const ReadObserver& observer = {}) {
    if (observer) observer(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("nrrd: cannot open " + path.string());
    Header h;
    try {
        h = read_header(in);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    const std::size_t n = h.grid.size();
    const std::size_t bytes = n * detail::scalar_size(h.type);
    std::vector<unsigned char> raw(bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes)
        throw ParseError(path.string() + ": nrrd payload shorter than sizes imply");
    const bool swap = (h.big_endian != (std::endian::native == std::endian::big));
    const std::size_t step = detail::scalar_size(h.type);
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(detail::decode(raw.data() + i * step, h.type, swap));
    return Image<float>(h.grid, std::move(data));
}

inline Volume read_volume(const std::filesystem::path& path, const ReadObserver& observer = {}) {
    return read_image(path, observer);
}

inline Mask read_mask(const std::filesystem::path& path, const ReadObserver& observer = {}) {
    const auto img = read_image(path, observer);
    Mask m(img.grid());
    for (std::size_t i = 0; i < img.size(); ++i) {
        if (img[i] != 0.0f && img[i] != 1.0f) throw ParseError(path.string() + ": mask values must be 0 or 1");
        m[i] = img[i] != 0.0f ? 1 : 0;
    }
    return m;
}

inline ProbabilityMap read_probability(const std::filesystem::path& path, const ReadObserver& observer = {}) {
    auto img = read_image(path, observer);
    for (float v : img.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw ParseError(path.string() + ": probability values must lie in [0,1]");
    return ProbabilityMap(std::move(img));
}

namespace detail {

inline void write_header(std::ostream& os, const Grid& g, const char* type) {
    os << "NRRD0004\n";
    os << "# written by segbench\n";
    os << "type: " << type << "\n";
    os << "dimension: 3\n";
    os << "space dimension: 3\n";
    os << "sizes: " << g.dims[0] << " " << g.dims[1] << " " << g.dims[2] << "\n";
    os << "space directions:";
    for (int a = 0; a < 3; ++a) {
        const Vec3 d = g.orientation.col(a) * g.spacing[a];
        os << " (" << fmt(d[0]) << "," << fmt(d[1]) << "," << fmt(d[2]) << ")";
    }
    os << "\n";
    os << "kinds: domain domain domain\n";
    os << "endian: little\n";
    os << "encoding: raw\n";
    os << "space origin: (" << fmt(g.origin[0]) << "," << fmt(g.origin[1]) << "," << fmt(g.origin[2]) << ")\n\n";
}

template <class T>
void write_payload(std::ostream& os, std::span<const T> data) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    } else {
        for (T v : data) {
            unsigned char buf[sizeof(T)];
            std::memcpy(buf, &v, sizeof(T));
            std::reverse(buf, buf + sizeof(T));
            os.write(reinterpret_cast<const char*>(buf), sizeof(T));
        }
    }
}

template <class T>
void write_file(const std::filesystem::path& path, const Grid& g, std::span<const T> data, const char* type) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("nrrd: cannot write " + path.string());
    write_header(os, g, type);
    write_payload(os, data);
    if (!os) throw IoError("nrrd: write failed for " + path.string());
}

}  // namespace detail

inline void write(const std::filesystem::path& path, const Volume& v) {
    detail::write_file(path, v.grid(), v.data(), "float");
}

inline void write(const std::filesystem::path& path, const Mask& m) {
    detail::write_file(path, m.grid(), m.data(), "uint8");
}

inline void write(const std::filesystem::path& path, const ProbabilityMap& p) {
    detail::write_file(path, p.grid(), p.data(), "float");
}

}  // namespace segbench::nrrd
