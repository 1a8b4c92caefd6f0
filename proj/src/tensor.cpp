#include "ink/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ink/common.hpp"

namespace ink {

std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

int64_t Tensor::numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= d;
    }
    return n;
}

Tensor Tensor::full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

Tensor Tensor::randn(std::vector<int> s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = stddev * rng.normal();
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> d) {
    if (numel_of(s) != static_cast<int64_t>(d.size()))
        throw std::invalid_argument("Tensor::from: shape/data size mismatch");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::max_abs_diff(const Tensor& o) const {
    double m = 0.0;
    for (size_t i = 0; i < data.size(); ++i) m = std::max(m, std::fabs(data[i] - o.data[i]));
    return m;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    check_same(a, b, "tensor add");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    check_same(a, b, "tensor sub");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    check_same(a, b, "tensor dot");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

}  // namespace ink
