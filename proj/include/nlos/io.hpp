#pragma once

// On-disk formats.
//
// NVOL / NTRA (little-endian):
//   magic[4] "NVOL" | "NTRA", u32 version, u32 ny, u32 nx, u32 nz-or-nt,
//   f64 wall_size, f64 bin_length, then f32 payload in [y][x][last] order.
// Masks are plain PBM (P1), images 16-bit PGM (P5, big-endian), run configs
// and manifests key=value text with '#' comments.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include "nlos/grid.hpp"

namespace nlos {

/// Input data that is malformed or inconsistent with other inputs.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t format_version = 1;
inline constexpr std::size_t header_bytes = 36;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::ranges::reverse(b);
    out.append(b.data(), b.size());
}

template <class T>
T get_le(const std::string& in, std::size_t pos) {
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::ranges::reverse(b);
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Writes via a temporary file in the same directory and renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw std::runtime_error("write failed for '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// NVOL / NTRA

struct RawCube {
    char kind = 'V';  // 'V' volume, 'T' transient
    std::uint32_t ny = 0, nx = 0, nk = 0;
    double wall_size = 0.0, bin_length = 0.0;
    std::vector<float> payload;
};

inline std::string encode_cube(const RawCube& c) {
    std::string out;
    out.reserve(header_bytes + 4 * c.payload.size());
    out.append(c.kind == 'V' ? "NVOL" : "NTRA", 4);
    detail::put_le(out, format_version);
    detail::put_le(out, c.ny);
    detail::put_le(out, c.nx);
    detail::put_le(out, c.nk);
    detail::put_le(out, c.wall_size);
    detail::put_le(out, c.bin_length);
    for (float v : c.payload) detail::put_le(out, v);
    return out;
}

inline RawCube decode_cube(const std::string& bytes, char expect_kind) {
    if (bytes.size() < header_bytes) throw DataError("file too short for header");
    const std::string magic = bytes.substr(0, 4);
    const std::string want = expect_kind == 'V' ? "NVOL" : "NTRA";
    if (magic != want) throw DataError("bad magic '" + magic + "', expected '" + want + "'");
    RawCube c;
    c.kind = expect_kind;
    const auto ver = detail::get_le<std::uint32_t>(bytes, 4);
    if (ver != format_version) throw DataError("unsupported version " + std::to_string(ver));
    c.ny = detail::get_le<std::uint32_t>(bytes, 8);
    c.nx = detail::get_le<std::uint32_t>(bytes, 12);
    c.nk = detail::get_le<std::uint32_t>(bytes, 16);
    c.wall_size = detail::get_le<double>(bytes, 20);
    c.bin_length = detail::get_le<double>(bytes, 28);
    const std::size_t n = std::size_t{c.ny} * c.nx * c.nk;
    if (n == 0) throw DataError("zero dimension in header");
    if (bytes.size() != header_bytes + 4 * n) {
        throw DataError("payload length " + std::to_string(bytes.size() - header_bytes) +
                        " does not match dims (" + std::to_string(4 * n) + " bytes expected)");
    }
    if (!(c.wall_size > 0) || !(c.bin_length > 0)) throw DataError("non-positive geometry in header");
    c.payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.payload[i] = detail::get_le<float>(bytes, header_bytes + 4 * i);
    return c;
}

inline void write_transient(const std::filesystem::path& path, const TransientCube& tau) {
    const SceneGrid& g = tau.grid;
    RawCube c{'T', static_cast<std::uint32_t>(g.ny), static_cast<std::uint32_t>(g.nx),
              static_cast<std::uint32_t>(g.nt), g.wall_size, g.bin_length, {}};
    c.payload.assign(tau.data.flat().begin(), tau.data.flat().end());
    write_file_atomic(path, encode_cube(c));
}

/// The header carries no depth count; `nz` defaults to nt / 2 (voxel depth = one bin).
inline TransientCube read_transient(const std::filesystem::path& path, std::size_t nz = 0) {
    const RawCube c = decode_cube(detail::read_file(path), 'T');
    const std::size_t z = nz ? nz : std::max<std::size_t>(1, c.nk / 2);
    TransientCube tau(make_grid(c.nx, c.ny, z, c.nk, c.wall_size, c.bin_length));
    std::ranges::copy(c.payload, tau.data.flat().begin());
    return tau;
}

inline void write_volume(const std::filesystem::path& path, const VoxelAlbedo& u) {
    const SceneGrid& g = u.grid;
    RawCube c{'V', static_cast<std::uint32_t>(g.ny), static_cast<std::uint32_t>(g.nx),
              static_cast<std::uint32_t>(g.nz), g.wall_size, g.bin_length, {}};
    c.payload.assign(u.data.flat().begin(), u.data.flat().end());
    write_file_atomic(path, encode_cube(c));
}

/// The header carries no time-bin count; `nt` defaults to 2 nz.
inline VoxelAlbedo read_volume(const std::filesystem::path& path, std::size_t nt = 0) {
    const RawCube c = decode_cube(detail::read_file(path), 'V');
    VoxelAlbedo u(make_grid(c.nx, c.ny, c.nk, nt ? nt : 2 * std::size_t{c.nk}, c.wall_size,
                            c.bin_length));
    std::ranges::copy(c.payload, u.data.flat().begin());
    return u;
}

// ---------------------------------------------------------------------------
// Masks

/// full | every_k:<n> | random:<count>:<seed>
inline ScanMask make_mask(std::string_view spec, std::size_t ny, std::size_t nx) {
    const std::string s(spec);
    auto fail = [&](const std::string& why) {
        return std::invalid_argument("bad mask spec '" + s + "': " + why +
                                     " (valid: full, every_k:<n>, random:<count>:<seed>)");
    };
    auto to_u64 = [&](const std::string& t) {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(t, &pos);
        } catch (const std::exception&) {
            throw fail("'" + t + "' is not a number");
        }
        if (pos != t.size() || t.empty() || t[0] == '-') throw fail("'" + t + "' is not a number");
        return static_cast<std::uint64_t>(v);
    };
    if (s == "full") return ScanMask::full(ny, nx);
    Array2<std::uint8_t> m(ny, nx, 0);
    if (s.starts_with("every_k:")) {
        const std::uint64_t k = to_u64(s.substr(8));
        if (k < 1) throw fail("stride must be >= 1");
        // Regular lattice centered in each k x k cell.
        for (std::size_t y = k / 2; y < ny; y += k)
            for (std::size_t x = k / 2; x < nx; x += k) m(y, x) = 1;
        if (std::ranges::none_of(m.flat(), [](auto v) { return v != 0; })) {
            throw fail("stride leaves no scan positions");
        }
        return ScanMask(std::move(m));
    }
    if (s.starts_with("random:")) {
        const auto colon = s.find(':', 7);
        if (colon == std::string::npos) throw fail("expected random:<count>:<seed>");
        const std::uint64_t count = to_u64(s.substr(7, colon - 7));
        const std::uint64_t seed = to_u64(s.substr(colon + 1));
        if (count < 1 || count > ny * nx) throw fail("count must be in [1, ny*nx]");
        // Partial Fisher-Yates with an explicit generator so the result is portable.
        std::vector<std::size_t> idx(ny * nx);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
            std::swap(idx[i], idx[j]);
            m[idx[i]] = 1;
        }
        return ScanMask(std::move(m));
    }
    throw fail("unknown kind");
}

inline std::string encode_pbm(const ScanMask& mask) {
    std::ostringstream out;
    out << "P1\n" << mask.nx() << ' ' << mask.ny() << '\n';
    for (std::size_t y = 0; y < mask.ny(); ++y) {
        for (std::size_t x = 0; x < mask.nx(); ++x) out << (x ? " " : "") << (mask(y, x) ? 1 : 0);
        out << '\n';
    }
    return out.str();
}

inline void write_mask(const std::filesystem::path& path, const ScanMask& mask) {
    write_file_atomic(path, encode_pbm(mask));
}

inline ScanMask read_mask(const std::filesystem::path& path) {
    std::istringstream in(detail::read_file(path));
    std::string tok;
    auto next = [&]() -> std::string {
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw DataError("truncated mask file '" + path.string() + "'");
    };
    if (next() != "P1") throw DataError("mask file '" + path.string() + "' is not a P1 PBM");
    std::size_t nx = 0, ny = 0;
    try {
        nx = std::stoul(next());
        ny = std::stoul(next());
    } catch (const std::logic_error&) {
        throw DataError("bad mask dimensions in '" + path.string() + "'");
    }
    Array2<std::uint8_t> m(ny, nx, 0);
    for (std::size_t i = 0; i < ny * nx; ++i) {
        const std::string v = next();
        if (v != "0" && v != "1") throw DataError("mask entries must be 0 or 1");
        m[i] = v == "1" ? 1 : 0;
    }
    try {
        return ScanMask(std::move(m));
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Images

/// P5 PGM, 16-bit big-endian, values in [0, 1] mapped to [0, 65535].
inline std::string encode_pgm16(const Field2& img) {
    std::string out = "P5\n" + std::to_string(img.nx()) + " " + std::to_string(img.ny()) + "\n65535\n";
    for (double v : img.flat()) {
        const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        const auto q = static_cast<std::uint16_t>(std::lround(c * 65535.0));
        out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    return out;
}

inline void write_pgm16(const std::filesystem::path& path, const Field2& img) {
    write_file_atomic(path, encode_pgm16(img));
}

inline Field2 read_pgm16(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    std::istringstream in(bytes);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 65535 || !in) throw DataError("not a 16-bit P5 PGM");
    const std::size_t pos = static_cast<std::size_t>(in.tellg()) + 1;
    if (bytes.size() != pos + 2 * w * h) throw DataError("PGM payload length mismatch");
    Field2 img(h, w);
    for (std::size_t i = 0; i < w * h; ++i) {
        const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
        img[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
    }
    return img;
}

// ---------------------------------------------------------------------------
// key=value text

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view text, const std::string& origin) {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (kv.contains(key)) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                        key + "'");
        }
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    SolverParams params;
    std::string mask = "full";
    std::string input;
    std::string out;
    std::size_t nz = 0;  // depth voxels for transient input; 0 means nt / 2
};

inline const std::set<std::string>& run_config_keys() {
    static const std::set<std::string> keys{
        "sigma",       "lambda",       "rho",          "eta",          "r1",
        "r2",          "r3",           "p",            "k_max",        "fista_iters",
        "u_iters",     "admm_iters_D", "admm_iters_I", "step_t",       "nonneg_clamp",
        "precondition", "reset_multipliers", "power_iters", "operator", "lct_mu",
        "cg_iters",    "cg_tol",       "mask",         "input",        "out",
        "nz"};
    return keys;
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double d = 0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(d)) {
        throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a finite number");
    }
    return d;
}

inline long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long n = 0;
    try {
        n = std::stol(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) {
        throw std::invalid_argument("config key '" + key + "': '" + v + "' is not an integer");
    }
    return n;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text, const std::string& origin = "config") {
    const KeyValues kv = parse_key_values(text, origin);
    for (const auto& [k, v] : kv) {
        if (!run_config_keys().contains(k)) {
            throw std::invalid_argument(origin + ": unknown key '" + k + "'");
        }
    }
    for (const char* req : {"sigma", "lambda"}) {
        if (!kv.contains(req)) {
            throw std::invalid_argument(origin + ": missing required key '" + std::string(req) +
                                        "' (scene dependent; see the parameter notes in README.md)");
        }
    }
    RunConfig rc;
    SolverParams& p = rc.params;
    auto num = [&](const char* k, double& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = detail::parse_double(k, it->second);
    };
    auto integer = [&](const char* k, int& dst) {
        if (auto it = kv.find(k); it != kv.end()) {
            dst = static_cast<int>(detail::parse_int(k, it->second));
        }
    };
    auto flag = [&](const char* k, bool& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = detail::parse_bool(k, it->second);
    };
    num("sigma", p.sigma);
    num("lambda", p.lambda);
    num("rho", p.rho);
    num("eta", p.eta);
    num("r1", p.r1);
    num("r2", p.r2);
    num("r3", p.r3);
    integer("p", p.p);
    integer("k_max", p.k_max);
    integer("fista_iters", p.fista_iters);
    integer("u_iters", p.u_iters);
    integer("admm_iters_D", p.admm_iters_D);
    integer("admm_iters_I", p.admm_iters_I);
    num("step_t", p.step_t);
    flag("nonneg_clamp", p.nonneg_clamp);
    flag("precondition", p.precondition);
    flag("reset_multipliers", p.reset_multipliers);
    integer("power_iters", p.power_iters);
    if (auto it = kv.find("operator"); it != kv.end()) {
        if (it->second == "sparse") p.op = OperatorKind::sparse;
        else if (it->second == "fft") p.op = OperatorKind::fft;
        else throw std::invalid_argument("config key 'operator': expected sparse or fft");
    }
    num("lct_mu", p.lct_mu);
    integer("cg_iters", p.cg_iters);
    num("cg_tol", p.cg_tol);
    if (auto it = kv.find("mask"); it != kv.end()) rc.mask = it->second;
    if (auto it = kv.find("input"); it != kv.end()) rc.input = it->second;
    if (auto it = kv.find("out"); it != kv.end()) rc.out = it->second;
    if (auto it = kv.find("nz"); it != kv.end()) {
        const long n = detail::parse_int("nz", it->second);
        if (n < 1) throw std::invalid_argument("config key 'nz' must be >= 1");
        rc.nz = static_cast<std::size_t>(n);
    }
    p.validate();
    return rc;
}

inline RunConfig read_run_config(const std::filesystem::path& path) {
    return parse_run_config(detail::read_file(path), path.string());
}

}  // namespace nlos
