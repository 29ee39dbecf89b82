#pragma once

// On-disk formats: network checkpoints, mask files, rmatrix.csv and flat
// key=value metrics files.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ucb/binary_io.hpp"
#include "ucb/errors.hpp"
#include "ucb/metrics.hpp"
#include "ucb/network.hpp"
#include "ucb/optimizer.hpp"

namespace ucb {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// "UCBN", version u32, layer count u32; per layer fan_in u32, fan_out u32 and the
/// mu-weights, rho-weights, mu-biases, rho-biases as row-major little-endian f64.
inline Bytes encode_checkpoint(const Network& net) {
    ByteWriter w;
    w.magic("UCBN");
    w.u32(kCheckpointFormatVersion);
    w.u32(static_cast<std::uint32_t>(net.layer_count()));
    for (const auto& l : net.layers()) {
        w.u32(static_cast<std::uint32_t>(l.fan_in()));
        w.u32(static_cast<std::uint32_t>(l.fan_out()));
        for (const Matrix* m : {&l.weights.mu, &l.weights.rho, &l.biases.mu, &l.biases.rho})
            for (Index i = 0; i < m->size(); ++i) w.f64(m->data()[i]);
    }
    return std::move(w).take();
}

inline std::vector<BayesLinearLayer> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("UCBN", "checkpoint");
    const auto version = r.u32("checkpoint");
    if (version != kCheckpointFormatVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = r.u32("checkpoint");
    std::vector<BayesLinearLayer> layers;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto fan_in = static_cast<Index>(r.u32("checkpoint"));
        const auto fan_out = static_cast<Index>(r.u32("checkpoint"));
        if (r.remaining() < static_cast<std::size_t>(2 * (fan_in + 1) * fan_out) * 8)
            throw CorruptionError("checkpoint: truncated layer " + std::to_string(k));
        BayesLinearLayer l;
        l.weights = GaussianVariational(fan_in, fan_out, 0.0, 0.0);
        l.biases = GaussianVariational(1, fan_out, 0.0, 0.0);
        for (Matrix* m : {&l.weights.mu, &l.weights.rho, &l.biases.mu, &l.biases.rho})
            for (Index i = 0; i < m->size(); ++i) m->data()[i] = r.f64("checkpoint");
        layers.push_back(std::move(l));
    }
    if (r.remaining() != 0) throw CorruptionError("checkpoint: trailing bytes");
    return layers;
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(net));
}

inline std::vector<BayesLinearLayer> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

inline void save_mask(const FreezeMap& freeze, const std::filesystem::path& path) {
    write_file(path, encode_freeze_map(freeze));
}

inline FreezeMap load_mask(const std::filesystem::path& path) { return decode_freeze_map(read_file(path)); }

// Text formats ------------------------------------------------------------------

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw InvalidArgument(what + ": cannot parse \"" + s + "\" as a number");
    return v;
}

/// Header row "task,1,...,n"; row i holds R(i, j) for j >= i, blank cells before.
inline std::string format_rmatrix_csv(const RMatrix& r) {
    std::ostringstream out;
    out << "task";
    for (int j = 1; j <= r.size(); ++j) out << ',' << j;
    out << '\n';
    for (int i = 1; i <= r.size(); ++i) {
        out << i;
        for (int j = 1; j <= r.size(); ++j) {
            out << ',';
            if (j >= i)
                if (const auto v = r.get(i, j)) out << format_double(*v);
        }
        out << '\n';
    }
    return out.str();
}

inline RMatrix parse_rmatrix_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("rmatrix.csv: empty");
    const int n = static_cast<int>(std::count(line.begin(), line.end(), ','));
    RMatrix r(n);
    for (int i = 1; i <= n; ++i) {
        if (!std::getline(in, line)) throw CorruptionError("rmatrix.csv: missing row " + std::to_string(i));
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        cells.resize(static_cast<std::size_t>(n) + 1);
        for (int j = i; j <= n; ++j)
            if (!cells[static_cast<std::size_t>(j)].empty())
                r.set(i, j, parse_double(cells[static_cast<std::size_t>(j)], "rmatrix.csv"));
    }
    return r;
}

/// Ordered flat key=value file. Lines starting with '#' and blank lines are ignored.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline KeyValues parse_key_values(const std::string& text, const std::string& what) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(line, what + ":" + std::to_string(line_no) + ": expected key=value, got \"" + line + "\"");
        kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
}

}  // namespace ucb
