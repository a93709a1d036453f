// Hot-path kernels for the radiance field: multi-resolution hash encoding
// (forward / parameter-gradient / spatial-gradient) and a generic 2-layer
// ReLU perceptron (forward / input-gradient). Weight gradients are batched
// as BLAS GEMMs on the Python side; these kernels only do the per-point
// work that numpy composes poorly on a single core.
//
// The per-point inner loops run over the hidden width, so the MLP kernels
// are template-specialized on it (64 in production, 16 in the miniature
// gradient-check fields) to let the compiler keep the whole hidden vector
// in SIMD registers. All kernels are serial and allocation-free:
// bitwise-deterministic given identical inputs. Templated on float/double
// so the float64 twin used by finite-difference checks shares this code.

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace py = pybind11;

using std::int64_t;
using std::uint32_t;

// Teschner et al. spatial-hash primes, one per axis.
static const uint32_t PRIME_X = 73856093u;
static const uint32_t PRIME_Y = 19349663u;
static const uint32_t PRIME_Z = 83492791u;

namespace {

struct GridGeom {
    int64_t levels;
    int64_t table_size;
    int64_t feats;
    const int64_t* res;
    double lo[3];
    double inv_extent[3];
};

inline uint32_t corner_hash(uint32_t cx, uint32_t cy, uint32_t cz, uint32_t mask) {
    return ((cx * PRIME_X) ^ (cy * PRIME_Y) ^ (cz * PRIME_Z)) & mask;
}

template <typename T>
inline void cell_of(const GridGeom& g, int64_t level, const T* p,
                    uint32_t* c, T* f) {
    const T r = static_cast<T>(g.res[level]);
    for (int a = 0; a < 3; ++a) {
        T u = (p[a] - static_cast<T>(g.lo[a])) * static_cast<T>(g.inv_extent[a]) * r;
        if (u < T(0)) u = T(0);
        if (u > r) u = r;
        int64_t ci = static_cast<int64_t>(u);
        if (ci > g.res[level] - 1) ci = g.res[level] - 1;
        c[a] = static_cast<uint32_t>(ci);
        f[a] = u - static_cast<T>(ci);
    }
}

// FEATS = feats_per_level when specialized (2 in production), 0 = runtime.
template <typename T, int FEATS>
void hash_forward_t(const GridGeom& g, const T* __restrict table,
                    const T* __restrict x, int64_t n, T* __restrict enc) {
    const uint32_t mask = static_cast<uint32_t>(g.table_size - 1);
    const int64_t F = FEATS ? FEATS : g.feats;
    for (int64_t i = 0; i < n; ++i) {
        const T* p = x + i * 3;
        T* out = enc + i * g.levels * F;
        for (int64_t l = 0; l < g.levels; ++l) {
            uint32_t c[3];
            T f[3];
            cell_of(g, l, p, c, f);
            const T wx[2] = {T(1) - f[0], f[0]};
            const T wy[2] = {T(1) - f[1], f[1]};
            const T wz[2] = {T(1) - f[2], f[2]};
            const T* tl = table + l * g.table_size * F;
            T acc[FEATS ? FEATS : 8];
            const int64_t fk = FEATS ? FEATS : (F < 8 ? F : 8);
            for (int64_t k = 0; k < fk; ++k) acc[k] = T(0);
            if (FEATS || F <= 8) {
                for (int corner = 0; corner < 8; ++corner) {
                    const uint32_t ox = corner & 1u, oy = (corner >> 1) & 1u,
                                   oz = (corner >> 2) & 1u;
                    const uint32_t h = corner_hash(c[0] + ox, c[1] + oy, c[2] + oz, mask);
                    const T w = wx[ox] * wy[oy] * wz[oz];
                    const T* e = tl + static_cast<int64_t>(h) * F;
                    for (int64_t k = 0; k < fk; ++k) acc[k] += w * e[k];
                }
                for (int64_t k = 0; k < fk; ++k) out[l * F + k] = acc[k];
            } else {
                for (int64_t k = 0; k < F; ++k) out[l * F + k] = T(0);
                for (int corner = 0; corner < 8; ++corner) {
                    const uint32_t ox = corner & 1u, oy = (corner >> 1) & 1u,
                                   oz = (corner >> 2) & 1u;
                    const uint32_t h = corner_hash(c[0] + ox, c[1] + oy, c[2] + oz, mask);
                    const T w = wx[ox] * wy[oy] * wz[oz];
                    const T* e = tl + static_cast<int64_t>(h) * F;
                    for (int64_t k = 0; k < F; ++k) out[l * F + k] += w * e[k];
                }
            }
        }
    }
}

template <typename T>
void hash_backward_t(const GridGeom& g, const T* __restrict x,
                     const T* __restrict denc, int64_t n, T* __restrict dtable) {
    const uint32_t mask = static_cast<uint32_t>(g.table_size - 1);
    const int64_t F = g.feats;
    for (int64_t i = 0; i < n; ++i) {
        const T* p = x + i * 3;
        const T* din = denc + i * g.levels * F;
        for (int64_t l = 0; l < g.levels; ++l) {
            uint32_t c[3];
            T f[3];
            cell_of(g, l, p, c, f);
            const T wx[2] = {T(1) - f[0], f[0]};
            const T wy[2] = {T(1) - f[1], f[1]};
            const T wz[2] = {T(1) - f[2], f[2]};
            T* dtl = dtable + l * g.table_size * F;
            for (int corner = 0; corner < 8; ++corner) {
                const uint32_t ox = corner & 1u, oy = (corner >> 1) & 1u, oz = (corner >> 2) & 1u;
                const uint32_t h = corner_hash(c[0] + ox, c[1] + oy, c[2] + oz, mask);
                const T w = wx[ox] * wy[oy] * wz[oz];
                T* e = dtl + static_cast<int64_t>(h) * F;
                for (int64_t k = 0; k < F; ++k) e[k] += w * din[l * F + k];
            }
        }
    }
}

// d(enc)/d(x): [n, levels*feats, 3]. Zero where the point is clamped to the
// bounds (the clamp kills the dependence on x along that axis).
template <typename T>
void hash_grad_x_t(const GridGeom& g, const T* table, const T* x, int64_t n, T* grad) {
    const uint32_t mask = static_cast<uint32_t>(g.table_size - 1);
    const int64_t F = g.feats;
    const int64_t row = g.levels * F * 3;
    for (int64_t i = 0; i < n; ++i) {
        const T* p = x + i * 3;
        T* gout = grad + i * row;
        for (int64_t k = 0; k < row; ++k) gout[k] = T(0);
        for (int64_t l = 0; l < g.levels; ++l) {
            const T r = static_cast<T>(g.res[l]);
            uint32_t c[3];
            T f[3];
            T scale[3];
            bool clamped[3];
            for (int a = 0; a < 3; ++a) {
                T u = (p[a] - static_cast<T>(g.lo[a])) * static_cast<T>(g.inv_extent[a]) * r;
                clamped[a] = (u <= T(0) || u >= r);
                scale[a] = r * static_cast<T>(g.inv_extent[a]);
            }
            cell_of(g, l, p, c, f);
            const T wx[2] = {T(1) - f[0], f[0]};
            const T wy[2] = {T(1) - f[1], f[1]};
            const T wz[2] = {T(1) - f[2], f[2]};
            const T* tl = table + l * g.table_size * F;
            for (int corner = 0; corner < 8; ++corner) {
                const uint32_t ox = corner & 1u, oy = (corner >> 1) & 1u, oz = (corner >> 2) & 1u;
                const uint32_t h = corner_hash(c[0] + ox, c[1] + oy, c[2] + oz, mask);
                const T* e = tl + static_cast<int64_t>(h) * F;
                const T sx = (ox ? T(1) : T(-1)) * wy[oy] * wz[oz];
                const T sy = (oy ? T(1) : T(-1)) * wx[ox] * wz[oz];
                const T sz = (oz ? T(1) : T(-1)) * wx[ox] * wy[oy];
                for (int64_t k = 0; k < F; ++k) {
                    T* gk = gout + (l * F + k) * 3;
                    if (!clamped[0]) gk[0] += sx * scale[0] * e[k];
                    if (!clamped[1]) gk[1] += sy * scale[1] * e[k];
                    if (!clamped[2]) gk[2] += sz * scale[2] * e[k];
                }
            }
        }
    }
}

// H = relu(X @ W0 + b0); Y = H @ W1 + b1. w1t is W1 transposed, [dout, WIDTH],
// so the output loop is a contiguous fixed-length dot product.
template <typename T, int WIDTH>
void mlp2_forward_t(const T* __restrict x, const T* __restrict w0,
                    const T* __restrict b0, const T* __restrict w1t,
                    const T* __restrict b1,
                    int64_t n, int64_t din, int64_t dout,
                    T* __restrict y, T* __restrict h) {
    for (int64_t i = 0; i < n; ++i) {
        const T* xi = x + i * din;
        T hl[WIDTH];
        for (int j = 0; j < WIDTH; ++j) hl[j] = b0[j];
        for (int64_t k = 0; k < din; ++k) {
            const T xk = xi[k];
            const T* w0k = w0 + k * WIDTH;
            for (int j = 0; j < WIDTH; ++j) hl[j] += xk * w0k[j];
        }
        T* hi = h + i * WIDTH;
        for (int j = 0; j < WIDTH; ++j) {
            hl[j] = hl[j] > T(0) ? hl[j] : T(0);
            hi[j] = hl[j];
        }
        T* yi = y + i * dout;
        for (int64_t j = 0; j < dout; ++j) {
            const T* w1j = w1t + j * WIDTH;
            T acc = T(0);
            #pragma omp simd reduction(+:acc)
            for (int k = 0; k < WIDTH; ++k) acc += hl[k] * w1j[k];
            yi[j] = acc + b1[j];
        }
    }
}

template <typename T>
void mlp2_forward_gen(const T* __restrict x, const T* __restrict w0,
                      const T* __restrict b0, const T* __restrict w1t,
                      const T* __restrict b1,
                      int64_t n, int64_t din, int64_t width, int64_t dout,
                      T* __restrict y, T* __restrict h) {
    for (int64_t i = 0; i < n; ++i) {
        const T* xi = x + i * din;
        T* hi = h + i * width;
        for (int64_t j = 0; j < width; ++j) hi[j] = b0[j];
        for (int64_t k = 0; k < din; ++k) {
            const T xk = xi[k];
            const T* w0k = w0 + k * width;
            for (int64_t j = 0; j < width; ++j) hi[j] += xk * w0k[j];
        }
        for (int64_t j = 0; j < width; ++j) hi[j] = hi[j] > T(0) ? hi[j] : T(0);
        T* yi = y + i * dout;
        for (int64_t j = 0; j < dout; ++j) {
            const T* w1j = w1t + j * width;
            T acc = T(0);
            #pragma omp simd reduction(+:acc)
            for (int64_t k = 0; k < width; ++k) acc += hi[k] * w1j[k];
            yi[j] = acc + b1[j];
        }
    }
}

// dH = relu'(H) * (dY @ W1^T); dX = dH @ W0^T. Uses w1t [dout, WIDTH] for a
// saxpy per output and w0 rows [din, WIDTH] for contiguous dots per input.
template <typename T, int WIDTH>
void mlp2_backward_t(const T* __restrict w0, const T* __restrict w1t,
                     const T* __restrict h, const T* __restrict dy,
                     int64_t n, int64_t din, int64_t dout,
                     T* __restrict dx, T* __restrict dh) {
    for (int64_t i = 0; i < n; ++i) {
        const T* dyi = dy + i * dout;
        const T* hi = h + i * WIDTH;
        T dhl[WIDTH];
        for (int j = 0; j < WIDTH; ++j) dhl[j] = T(0);
        for (int64_t k = 0; k < dout; ++k) {
            const T dk = dyi[k];
            const T* w1k = w1t + k * WIDTH;
            for (int j = 0; j < WIDTH; ++j) dhl[j] += dk * w1k[j];
        }
        T* dhi = dh + i * WIDTH;
        for (int j = 0; j < WIDTH; ++j) {
            dhl[j] = hi[j] > T(0) ? dhl[j] : T(0);
            dhi[j] = dhl[j];
        }
        T* dxi = dx + i * din;
        for (int64_t j = 0; j < din; ++j) {
            const T* w0j = w0 + j * WIDTH;
            T acc = T(0);
            #pragma omp simd reduction(+:acc)
            for (int k = 0; k < WIDTH; ++k) acc += dhl[k] * w0j[k];
            dxi[j] = acc;
        }
    }
}

template <typename T>
void mlp2_backward_gen(const T* __restrict w0, const T* __restrict w1t,
                       const T* __restrict h, const T* __restrict dy,
                       int64_t n, int64_t din, int64_t width, int64_t dout,
                       T* __restrict dx, T* __restrict dh) {
    for (int64_t i = 0; i < n; ++i) {
        const T* dyi = dy + i * dout;
        const T* hi = h + i * width;
        T* dhi = dh + i * width;
        for (int64_t j = 0; j < width; ++j) dhi[j] = T(0);
        for (int64_t k = 0; k < dout; ++k) {
            const T dk = dyi[k];
            const T* w1k = w1t + k * width;
            for (int64_t j = 0; j < width; ++j) dhi[j] += dk * w1k[j];
        }
        for (int64_t j = 0; j < width; ++j)
            if (hi[j] <= T(0)) dhi[j] = T(0);
        T* dxi = dx + i * din;
        for (int64_t j = 0; j < din; ++j) {
            const T* w0j = w0 + j * width;
            T acc = T(0);
            #pragma omp simd reduction(+:acc)
            for (int64_t k = 0; k < width; ++k) acc += dhi[k] * w0j[k];
            dxi[j] = acc;
        }
    }
}

// ---- binding helpers ----

template <typename T>
using carr = py::array_t<T, py::array::c_style>;

template <typename T>
GridGeom grid_geom(const carr<T>& table, const carr<int64_t>& res,
                   const carr<T>& lo, const carr<T>& hi) {
    if (table.ndim() != 3) throw std::invalid_argument("table must be [levels, table_size, feats]");
    if (res.ndim() != 1 || res.shape(0) != table.shape(0))
        throw std::invalid_argument("res must be [levels]");
    if (lo.ndim() != 1 || lo.shape(0) != 3 || hi.ndim() != 1 || hi.shape(0) != 3)
        throw std::invalid_argument("lo/hi must be [3]");
    GridGeom g;
    g.levels = table.shape(0);
    g.table_size = table.shape(1);
    g.feats = table.shape(2);
    if (g.table_size <= 0 || (g.table_size & (g.table_size - 1)) != 0)
        throw std::invalid_argument("table_size must be a power of two");
    g.res = res.data();
    for (int a = 0; a < 3; ++a) {
        g.lo[a] = static_cast<double>(lo.data()[a]);
        const double ext = static_cast<double>(hi.data()[a]) - g.lo[a];
        if (ext <= 0) throw std::invalid_argument("bounds must satisfy lo < hi");
        g.inv_extent[a] = 1.0 / ext;
    }
    return g;
}

template <typename T>
void check_points(const carr<T>& x) {
    if (x.ndim() != 2 || x.shape(1) != 3) throw std::invalid_argument("x must be [n, 3]");
}

template <typename T>
void bind_hash_forward(carr<T> table, carr<int64_t> res,
                       carr<T> lo, carr<T> hi, carr<T> x, carr<T> enc) {
    auto g = grid_geom<T>(table, res, lo, hi);
    check_points(x);
    const int64_t n = x.shape(0);
    if (enc.ndim() != 2 || enc.shape(0) != n || enc.shape(1) != g.levels * g.feats)
        throw std::invalid_argument("enc must be [n, levels*feats]");
    const T* tp = table.data();
    const T* xp = x.data();
    T* ep = enc.mutable_data();
    py::gil_scoped_release rel;
    if (g.feats == 2) hash_forward_t<T, 2>(g, tp, xp, n, ep);
    else if (g.feats == 1) hash_forward_t<T, 1>(g, tp, xp, n, ep);
    else if (g.feats == 4) hash_forward_t<T, 4>(g, tp, xp, n, ep);
    else hash_forward_t<T, 0>(g, tp, xp, n, ep);
}

template <typename T>
void bind_hash_backward(carr<T> table, carr<int64_t> res,
                        carr<T> lo, carr<T> hi, carr<T> x, carr<T> denc, carr<T> dtable) {
    auto g = grid_geom<T>(table, res, lo, hi);
    check_points(x);
    const int64_t n = x.shape(0);
    if (denc.ndim() != 2 || denc.shape(0) != n || denc.shape(1) != g.levels * g.feats)
        throw std::invalid_argument("denc must be [n, levels*feats]");
    if (dtable.ndim() != 3 || dtable.shape(0) != g.levels || dtable.shape(1) != g.table_size ||
        dtable.shape(2) != g.feats)
        throw std::invalid_argument("dtable must match table shape");
    const T* xp = x.data();
    const T* dp = denc.data();
    T* dt = dtable.mutable_data();
    py::gil_scoped_release rel;
    hash_backward_t(g, xp, dp, n, dt);
}

template <typename T>
void bind_hash_grad_x(carr<T> table, carr<int64_t> res,
                      carr<T> lo, carr<T> hi, carr<T> x, carr<T> grad) {
    auto g = grid_geom<T>(table, res, lo, hi);
    check_points(x);
    const int64_t n = x.shape(0);
    if (grad.ndim() != 3 || grad.shape(0) != n || grad.shape(1) != g.levels * g.feats ||
        grad.shape(2) != 3)
        throw std::invalid_argument("grad must be [n, levels*feats, 3]");
    const T* tp = table.data();
    const T* xp = x.data();
    T* gp = grad.mutable_data();
    py::gil_scoped_release rel;
    hash_grad_x_t(g, tp, xp, n, gp);
}

template <typename T>
void bind_mlp2_forward(carr<T> x, carr<T> w0, carr<T> b0, carr<T> w1t, carr<T> b1,
                       carr<T> y, carr<T> h) {
    if (x.ndim() != 2 || w0.ndim() != 2 || w1t.ndim() != 2)
        throw std::invalid_argument("x, w0, w1t must be 2-d");
    const int64_t n = x.shape(0), din = x.shape(1);
    const int64_t width = w0.shape(1), dout = w1t.shape(0);
    if (w0.shape(0) != din || w1t.shape(1) != width || b0.shape(0) != width ||
        b1.shape(0) != dout)
        throw std::invalid_argument("mlp2_forward: inconsistent shapes");
    if (y.ndim() != 2 || y.shape(0) != n || y.shape(1) != dout ||
        h.ndim() != 2 || h.shape(0) != n || h.shape(1) != width)
        throw std::invalid_argument("mlp2_forward: bad output shapes");
    const T* xp = x.data();
    const T* w0p = w0.data();
    const T* b0p = b0.data();
    const T* w1p = w1t.data();
    const T* b1p = b1.data();
    T* yp = y.mutable_data();
    T* hp = h.mutable_data();
    py::gil_scoped_release rel;
    if (width == 64) mlp2_forward_t<T, 64>(xp, w0p, b0p, w1p, b1p, n, din, dout, yp, hp);
    else if (width == 16) mlp2_forward_t<T, 16>(xp, w0p, b0p, w1p, b1p, n, din, dout, yp, hp);
    else if (width == 32) mlp2_forward_t<T, 32>(xp, w0p, b0p, w1p, b1p, n, din, dout, yp, hp);
    else mlp2_forward_gen(xp, w0p, b0p, w1p, b1p, n, din, width, dout, yp, hp);
}

template <typename T>
void bind_mlp2_backward(carr<T> w0, carr<T> w1t, carr<T> h, carr<T> dy,
                        carr<T> dx, carr<T> dh) {
    if (h.ndim() != 2 || dy.ndim() != 2 || w0.ndim() != 2 || w1t.ndim() != 2)
        throw std::invalid_argument("mlp2_backward: arrays must be 2-d");
    const int64_t n = h.shape(0), width = h.shape(1);
    const int64_t dout = w1t.shape(0), din = w0.shape(0);
    if (w1t.shape(1) != width || w0.shape(1) != width)
        throw std::invalid_argument("mlp2_backward: weight shapes wrong");
    if (dy.shape(0) != n || dy.shape(1) != dout || dx.shape(0) != n || dx.shape(1) != din ||
        dh.shape(0) != n || dh.shape(1) != width)
        throw std::invalid_argument("mlp2_backward: bad shapes");
    const T* w0p = w0.data();
    const T* w1p = w1t.data();
    const T* hp = h.data();
    const T* dyp = dy.data();
    T* dxp = dx.mutable_data();
    T* dhp = dh.mutable_data();
    py::gil_scoped_release rel;
    if (width == 64) mlp2_backward_t<T, 64>(w0p, w1p, hp, dyp, n, din, dout, dxp, dhp);
    else if (width == 16) mlp2_backward_t<T, 16>(w0p, w1p, hp, dyp, n, din, dout, dxp, dhp);
    else if (width == 32) mlp2_backward_t<T, 32>(w0p, w1p, hp, dyp, n, din, dout, dxp, dhp);
    else mlp2_backward_gen(w0p, w1p, hp, dyp, n, din, width, dout, dxp, dhp);
}

}  // namespace

PYBIND11_MODULE(_kernels, m) {
    m.doc() = "serial hash-grid and small-MLP kernels";
    m.def("hash_forward", &bind_hash_forward<float>);
    m.def("hash_forward", &bind_hash_forward<double>);
    m.def("hash_backward", &bind_hash_backward<float>);
    m.def("hash_backward", &bind_hash_backward<double>);
    m.def("hash_grad_x", &bind_hash_grad_x<float>);
    m.def("hash_grad_x", &bind_hash_grad_x<double>);
    m.def("mlp2_forward", &bind_mlp2_forward<float>);
    m.def("mlp2_forward", &bind_mlp2_forward<double>);
    m.def("mlp2_backward", &bind_mlp2_backward<float>);
    m.def("mlp2_backward", &bind_mlp2_backward<double>);
}
