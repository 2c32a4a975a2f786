#include "phasekit/periodic.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace phasekit::per {

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t& off) {
    if (off + 4 > b.size()) throw Error("periodic params: truncated binary payload");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
    off += 4;
    return v;
}

double read_f64(const std::vector<std::uint8_t>& b, std::size_t& off) {
    if (off + 8 > b.size()) throw Error("periodic params: truncated binary payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
    off += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void PeriodicParams::validate() const {
    const std::size_t c = s.size();
    if (a.size() != c || f.size() != c || b.size() != c)
        throw Error("periodic params: channel arrays differ in length");
    if (t_sec <= 0.0) throw Error("periodic params: window duration must be positive");
    for (std::size_t i = 0; i < c; ++i) {
        if (!(a[i] >= 0.0)) throw Error("periodic params: amplitude must be nonnegative");
        if (!(s[i] >= 0.0 && s[i] < 1.0)) throw Error("periodic params: phase shift must lie in [0,1)");
        if (!(f[i] >= 0.0 && f[i] <= f_max + 1e-9))
            throw Error("periodic params: frequency outside [0, f_max]");
    }
}

DftResult dft_decompose(const ag::Tensor& curve, double t_sec) {
    if (curve.ndim() != 2) throw ShapeError("dft_decompose: expected a (C, N) curve");
    const std::int64_t n = curve.dim(1);
    if (n < 4 || n % 2 != 0) throw Error("dft_decompose: sample count must be even and >= 4");
    if (t_sec <= 0.0) throw Error("dft_decompose: window duration must be positive");
    const std::int64_t half = n / 2;

    // Real DFT as two constant matrix multiplies; bin k column holds the
    // basis sampled at 2*pi*k*i/N.
    std::vector<double> cm(static_cast<std::size_t>(n * (half + 1)));
    std::vector<double> sm(static_cast<std::size_t>(n * (half + 1)));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t k = 0; k <= half; ++k) {
            const double w = kTau * static_cast<double>(k) * static_cast<double>(i) / static_cast<double>(n);
            cm[static_cast<std::size_t>(i * (half + 1) + k)] = std::cos(w);
            sm[static_cast<std::size_t>(i * (half + 1) + k)] = std::sin(w);
        }
    }
    ag::Tensor cos_m = ag::Tensor::from(std::move(cm), {n, half + 1}).with_tape(curve.tape);
    ag::Tensor sin_m = ag::Tensor::from(std::move(sm), {n, half + 1}).with_tape(curve.tape);

    ag::Tensor re = ag::matmul(curve, cos_m);            // (C, half+1)
    ag::Tensor im = ag::neg(ag::matmul(curve, sin_m));   // (C, half+1)

    std::vector<std::int64_t> dc = {0};
    std::vector<std::int64_t> rest(static_cast<std::size_t>(half));
    for (std::int64_t k = 0; k < half; ++k) rest[static_cast<std::size_t>(k)] = k + 1;

    DftResult out;
    out.b = ag::scale(ag::select_cols(re, dc), 1.0 / static_cast<double>(n));
    ag::Tensor re1 = ag::select_cols(re, rest);
    ag::Tensor im1 = ag::select_cols(im, rest);
    out.power = ag::add(ag::mul(re1, re1), ag::mul(im1, im1));  // (C, half)

    ag::Tensor total = ag::sum_axis(out.power, 1, true);  // (C, 1)
    out.a = ag::scale(ag::sqrt(ag::add_scalar(total, 1e-12)), 2.0 / static_cast<double>(n));

    std::vector<double> freqs(static_cast<std::size_t>(half));
    for (std::int64_t k = 0; k < half; ++k)
        freqs[static_cast<std::size_t>(k)] = static_cast<double>(k + 1) / t_sec;
    ag::Tensor freq_row = ag::Tensor::from(std::move(freqs), {1, half}).with_tape(curve.tape);
    ag::Tensor weighted = ag::sum_axis(ag::mul(out.power, freq_row), 1, true);
    out.f = ag::div(weighted, ag::add_scalar(total, 1e-12));
    return out;
}

ag::Tensor phase_regress(const ag::Tensor& curve, const ag::Tensor& w, const ag::Tensor& bias) {
    if (curve.ndim() != 2 || w.ndim() != 2 || w.dim(1) != 2 || w.dim(0) != curve.dim(1))
        throw ShapeError("phase_regress: curve (C,N) needs weights (N,2)");
    ag::Tensor uv = ag::linear(curve, w, bias);  // (C, 2)
    ag::Tensor u = ag::select_cols(uv, {0});
    ag::Tensor v = ag::select_cols(uv, {1});
    return ag::atan2_phase(u, v);  // (C, 1)
}

ag::Tensor eval_latent(const ag::Tensor& s, const ag::Tensor& a, const ag::Tensor& f,
                       const ag::Tensor& b, const std::vector<double>& times, double t_sec) {
    if (times.empty()) throw Error("eval_latent: no query times");
    const std::int64_t n = static_cast<std::int64_t>(times.size());
    std::vector<double> scaled(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) scaled[i] = times[i] * t_sec;
    ag::Tensor t_row = ag::Tensor::from(std::move(scaled), {1, n}).with_tape(s.tape);
    ag::Tensor arg = ag::scale(ag::sub(ag::mul(f, t_row), s), kTau);  // (C, N)
    return ag::add(ag::mul(a, ag::sin(arg)), b);
}

ag::Tensor phase_manifold(const ag::Tensor& s, const ag::Tensor& a) {
    ag::Tensor angle = ag::scale(s, kTau);
    ag::Tensor ps = ag::mul(a, ag::sin(angle));
    ag::Tensor pc = ag::mul(a, ag::cos(angle));
    return ag::concat({ps, pc}, 1);  // (C, 2)
}

std::vector<double> eval_latent(const PeriodicParams& params, const std::vector<double>& times) {
    params.validate();
    const int c = params.channels();
    std::vector<double> out(static_cast<std::size_t>(c) * times.size());
    for (int ci = 0; ci < c; ++ci) {
        for (std::size_t ti = 0; ti < times.size(); ++ti) {
            const double arg = kTau * (params.f[static_cast<std::size_t>(ci)] * times[ti] * params.t_sec -
                                       params.s[static_cast<std::size_t>(ci)]);
            out[static_cast<std::size_t>(ci) * times.size() + ti] =
                params.a[static_cast<std::size_t>(ci)] * std::sin(arg) + params.b[static_cast<std::size_t>(ci)];
        }
    }
    return out;
}

std::vector<double> phase_manifold(const PeriodicParams& params) {
    params.validate();
    std::vector<double> out(static_cast<std::size_t>(params.channels()) * 2);
    for (int c = 0; c < params.channels(); ++c) {
        const double ang = kTau * params.s[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(2 * c)] = params.a[static_cast<std::size_t>(c)] * std::sin(ang);
        out[static_cast<std::size_t>(2 * c + 1)] = params.a[static_cast<std::size_t>(c)] * std::cos(ang);
    }
    return out;
}

std::string params_to_csv(const PeriodicParams& params) {
    params.validate();
    std::ostringstream os;
    os.precision(17);
    os << "C,T_sec,f_max\n" << params.channels() << "," << params.t_sec << "," << params.f_max << "\n";
    os << "s,a,f,b\n";
    for (int c = 0; c < params.channels(); ++c) {
        os << params.s[static_cast<std::size_t>(c)] << "," << params.a[static_cast<std::size_t>(c)] << ","
           << params.f[static_cast<std::size_t>(c)] << "," << params.b[static_cast<std::size_t>(c)] << "\n";
    }
    return os.str();
}

PeriodicParams params_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    auto next_line = [&](const char* what) {
        while (std::getline(is, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return;
        }
        throw Error(std::string("periodic params: missing ") + what);
    };
    auto split = [](const std::string& l) {
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            const std::size_t pos = l.find(',', start);
            f.push_back(l.substr(start, pos == std::string::npos ? pos : pos - start));
            if (pos == std::string::npos) return f;
            start = pos + 1;
        }
    };
    auto to_double = [](const std::string& s) {
        std::size_t used = 0;
        double v;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            throw Error("periodic params: bad number '" + s + "'");
        }
        if (used != s.size()) throw Error("periodic params: bad number '" + s + "'");
        return v;
    };

    next_line("header");
    if (line != "C,T_sec,f_max") throw Error("periodic params: expected 'C,T_sec,f_max' header");
    next_line("header values");
    auto hv = split(line);
    if (hv.size() != 3) throw Error("periodic params: header needs 3 values");
    const double c_val = to_double(hv[0]);
    if (c_val < 1 || c_val != std::floor(c_val)) throw Error("periodic params: bad channel count");
    const int c = static_cast<int>(c_val);
    PeriodicParams p;
    p.t_sec = to_double(hv[1]);
    p.f_max = to_double(hv[2]);
    next_line("column header");
    if (line != "s,a,f,b") throw Error("periodic params: expected 's,a,f,b' column header");
    for (int i = 0; i < c; ++i) {
        next_line("channel row");
        auto row = split(line);
        if (row.size() != 4) throw Error("periodic params: channel rows need 4 values");
        p.s.push_back(to_double(row[0]));
        p.a.push_back(to_double(row[1]));
        p.f.push_back(to_double(row[2]));
        p.b.push_back(to_double(row[3]));
    }
    p.validate();
    return p;
}

std::vector<std::uint8_t> params_to_binary(const PeriodicParams& params) {
    params.validate();
    std::vector<std::uint8_t> out = {'P', 'K', 'P', 'R'};
    append_u32(out, 1);
    append_u32(out, static_cast<std::uint32_t>(params.channels()));
    append_f64(out, params.t_sec);
    append_f64(out, params.f_max);
    for (int c = 0; c < params.channels(); ++c) {
        append_f64(out, params.s[static_cast<std::size_t>(c)]);
        append_f64(out, params.a[static_cast<std::size_t>(c)]);
        append_f64(out, params.f[static_cast<std::size_t>(c)]);
        append_f64(out, params.b[static_cast<std::size_t>(c)]);
    }
    return out;
}

PeriodicParams params_from_binary(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || bytes[0] != 'P' || bytes[1] != 'K' || bytes[2] != 'P' || bytes[3] != 'R')
        throw Error("periodic params: bad magic");
    std::size_t off = 4;
    const std::uint32_t version = read_u32(bytes, off);
    if (version != 1) throw Error("periodic params: unsupported version " + std::to_string(version));
    const std::uint32_t c = read_u32(bytes, off);
    PeriodicParams p;
    p.t_sec = read_f64(bytes, off);
    p.f_max = read_f64(bytes, off);
    for (std::uint32_t i = 0; i < c; ++i) {
        p.s.push_back(read_f64(bytes, off));
        p.a.push_back(read_f64(bytes, off));
        p.f.push_back(read_f64(bytes, off));
        p.b.push_back(read_f64(bytes, off));
    }
    if (off != bytes.size()) throw Error("periodic params: trailing bytes");
    p.validate();
    return p;
}

}  // namespace phasekit::per
