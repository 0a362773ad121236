#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cft {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

/// Dense row-major n-dimensional array. Extents must be positive; there is
/// no implicit broadcasting anywhere in the library.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> data;

    Tensor() = default;

    explicit Tensor(Shape sh) : shape(std::move(sh)) {
        validate_shape();
        data.assign(shape_numel(shape), S(0));
    }

    Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        validate_shape();
        if (data.size() != shape_numel(shape)) {
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
    }

    static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }

    static Tensor full(Shape sh, S v) {
        Tensor t(std::move(sh));
        for (auto& x : t.data) x = v;
        return t;
    }

    static Tensor scalar(S v) { return Tensor({1}, {v}); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = S(1);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t last_extent() const { return shape.back(); }

    bool is_matrix() const { return shape.size() == 2; }

    std::size_t rows() const {
        require_matrix();
        return shape[0];
    }
    std::size_t cols() const {
        require_matrix();
        return shape[1];
    }

    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }

    S& at2(std::size_t r, std::size_t c) {
        require_matrix();
        return data[r * shape[1] + c];
    }
    const S& at2(std::size_t r, std::size_t c) const {
        require_matrix();
        return data[r * shape[1] + c];
    }

    S& at3(std::size_t i, std::size_t j, std::size_t k) {
        if (shape.size() != 3) throw std::invalid_argument("tensor: rank-3 access on " + shape_str(shape));
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const S& at3(std::size_t i, std::size_t j, std::size_t k) const {
        return const_cast<Tensor*>(this)->at3(i, j, k);
    }

    Tensor reshaped(Shape sh) const {
        if (shape_numel(sh) != numel()) {
            throw std::invalid_argument("tensor: cannot reshape " + shape_str(shape) + " to " + shape_str(sh));
        }
        return Tensor(std::move(sh), data);
    }

    bool all_finite() const {
        for (S v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    /// Checked assertion used at module boundaries; names the offending context.
    void assert_finite(const std::string& context) const {
        if (!all_finite()) {
            throw std::runtime_error("non-finite value in " + context + " " + shape_str(shape));
        }
    }

    bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }

private:
    void validate_shape() const {
        if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
        for (auto e : shape) {
            if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
        }
    }
    void require_matrix() const {
        if (shape.size() != 2) {
            throw std::invalid_argument("tensor: matrix operation on rank-" + std::to_string(shape.size()) +
                                        " tensor " + shape_str(shape));
        }
    }
};

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& t) {
    Tensor<To> out;
    out.shape = t.shape;
    out.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

}  // namespace cft
