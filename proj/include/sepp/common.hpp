#pragma once

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepp {

/// Error type thrown by every operation in the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void msg_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    msg_append(os, rest...);
}

} // namespace detail

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
    std::ostringstream os;
    detail::msg_append(os, parts...);
    throw Error(os.str());
}

template <typename... Parts>
void require(bool condition, const Parts&... parts) {
    if (!condition) {
        fail(parts...);
    }
}

/// Wall-clock stopwatch used by the mining report and the metrics stream.
class Stopwatch {
public:
    Stopwatch() : start_(clock::now()) {}

    void restart() { start_ = clock::now(); }

    double seconds() const {
        return std::chrono::duration<double>(clock::now() - start_).count();
    }

private:
    using clock = std::chrono::steady_clock;
    clock::time_point start_;
};

// ---- little-endian binary primitives (file formats are specified LE) ----

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& in, const char* what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    require(in.gcount() == 8, "truncated input while reading ", what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

inline void write_f32_le(std::ostream& out, const float* data, std::size_t count) {
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &data[i], 4);
            unsigned char b[4];
            for (int k = 0; k < 4; ++k) {
                b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xffu);
            }
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
}

inline void read_f32_le(std::istream& in, float* data, std::size_t count, const char* what) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
        require(static_cast<std::size_t>(in.gcount()) == count * 4, "truncated input while reading ", what);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            unsigned char b[4];
            in.read(reinterpret_cast<char*>(b), 4);
            require(in.gcount() == 4, "truncated input while reading ", what);
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k) {
                bits |= static_cast<std::uint32_t>(b[k]) << (8 * k);
            }
            std::memcpy(&data[i], &bits, 4);
        }
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write ", path);
    out << text;
    require(out.good(), "write to ", path, " failed");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot read ", path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

/// Ordinary least squares fit y = a*x + b; returns the coefficient of
/// determination. Used by the K-size timing harness.
inline double linear_fit_r2(const std::vector<double>& xs, const std::vector<double>& ys) {
    require(xs.size() == ys.size() && xs.size() >= 2, "linear_fit_r2: need at least two points");
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    require(denom != 0.0, "linear_fit_r2: degenerate x values");
    const double a = (n * sxy - sx * sy) / denom;
    const double b = (sy - a * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double fit = a * xs[i] + b;
        ss_res += (ys[i] - fit) * (ys[i] - fit);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    if (ss_tot == 0.0) {
        return ss_res == 0.0 ? 1.0 : 0.0;
    }
    return 1.0 - ss_res / ss_tot;
}

} // namespace sepp
