#ifndef MSSM_AFFINE_SCAN_HPP
#define MSSM_AFFINE_SCAN_HPP

// Associative scan over affine recurrence steps s_n = M_n s_{n-1} + F_n.
//
// Each step is an AffineElement (M_n, F_n). Elements compose with
//   (a_M, a_F) . (b_M, b_F) = (b_M a_M, b_M a_F + b_F)
// which is associative, so the sequence of states can be produced by any
// fixed prefix circuit. scan_sequential is the left-to-right oracle;
// scan_parallel uses a Ladner-Fischer circuit of depth ceil(log2 L) and
// fewer than 4L combines.
//
// Structured transitions stay structured under composition:
//   Diagonal        diag(d)
//   MomentumBlock   [[diag(p), diag(q)], [0, r I]]      width 2N
//   HeavyBallBlock  N independent 2x2 blocks on (s_i, s_{N+i})  width 2N
// and Dense is the fallback every kind can be densified into.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "numkit.hpp"

namespace mssm::scan {

enum class TransitionKind { dense, diagonal, momentum_block, heavy_ball_block };

inline const char* kind_name(TransitionKind k)
{
    switch (k) {
    case TransitionKind::dense: return "dense";
    case TransitionKind::diagonal: return "diagonal";
    case TransitionKind::momentum_block: return "momentum";
    case TransitionKind::heavy_ball_block: return "heavyball";
    }
    return "?";
}

inline TransitionKind parse_kind(const std::string& s)
{
    if (s == "dense") return TransitionKind::dense;
    if (s == "diagonal") return TransitionKind::diagonal;
    if (s == "momentum") return TransitionKind::momentum_block;
    if (s == "heavyball") return TransitionKind::heavy_ball_block;
    throw ContractError("unknown transition kind '" + s + "'");
}

template <class T>
struct Dense {
    std::size_t width{0};
    std::vector<T> m;  // row-major width x width

    T& at(std::size_t r, std::size_t c) { return m[r * width + c]; }
    const T& at(std::size_t r, std::size_t c) const { return m[r * width + c]; }
};

template <class T>
struct Diagonal {
    std::vector<T> d;
};

template <class T>
struct MomentumBlock {
    std::vector<T> p;
    std::vector<T> q;
    T r{};
};

/// [[a, b], [c, d]]
template <class T>
struct Block2 {
    T a{}, b{}, c{}, d{};
};

template <class T>
struct HeavyBallBlock {
    std::vector<Block2<T>> blocks;
};

template <class T>
using Transition = std::variant<Dense<T>, Diagonal<T>, MomentumBlock<T>, HeavyBallBlock<T>>;

template <class T>
struct AffineElement {
    Transition<T> transition;
    std::vector<T> offset;
};

struct ScanOptions {
    bool keepTransitions{false};
    unsigned workers{1};
};

template <class T>
struct ScanOutput {
    std::size_t length{0};
    std::size_t width{0};
    std::vector<T> states;  // length x width, states for n = 1..L
    std::optional<std::vector<Transition<T>>> composedTransitions;
    int combineDepth{1};     // levels of the combine DAG, leaves counted as level 1
    std::size_t combines{0};  // combine operations performed (0 for the sequential path)

    const T* state(std::size_t n) const { return states.data() + n * width; }
};

// ---------------------------------------------------------------------------
// Shape helpers.

template <class T>
TransitionKind kind_of(const Transition<T>& t)
{
    return static_cast<TransitionKind>(t.index());
}

template <class T>
std::size_t width_of(const Transition<T>& t)
{
    return std::visit(
        [](const auto& x) -> std::size_t {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, Dense<T>>) {
                return x.width;
            } else if constexpr (std::is_same_v<X, Diagonal<T>>) {
                return x.d.size();
            } else if constexpr (std::is_same_v<X, MomentumBlock<T>>) {
                return 2 * x.p.size();
            } else {
                return 2 * x.blocks.size();
            }
        },
        t);
}

template <class T>
void check_element(const AffineElement<T>& e)
{
    if (const auto* mb = std::get_if<MomentumBlock<T>>(&e.transition)) {
        require(mb->p.size() == mb->q.size(), "MomentumBlock: p and q lengths differ");
    }
    if (const auto* dn = std::get_if<Dense<T>>(&e.transition)) {
        require(dn->m.size() == dn->width * dn->width, "Dense: matrix is not width x width");
    }
    require(width_of(e.transition) == e.offset.size(), "AffineElement: transition width != offset length");
}

template <class T>
Dense<T> densify(const Transition<T>& t)
{
    const std::size_t w = width_of(t);
    Dense<T> out{w, std::vector<T>(w * w, zero_of<T>())};
    std::visit(
        [&](const auto& x) {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, Dense<T>>) {
                out = x;
            } else if constexpr (std::is_same_v<X, Diagonal<T>>) {
                for (std::size_t i = 0; i < w; ++i) out.at(i, i) = x.d[i];
            } else if constexpr (std::is_same_v<X, MomentumBlock<T>>) {
                const std::size_t n = x.p.size();
                for (std::size_t i = 0; i < n; ++i) {
                    out.at(i, i) = x.p[i];
                    out.at(i, n + i) = x.q[i];
                    out.at(n + i, n + i) = x.r;
                }
            } else {
                const std::size_t n = x.blocks.size();
                for (std::size_t i = 0; i < n; ++i) {
                    out.at(i, i) = x.blocks[i].a;
                    out.at(i, n + i) = x.blocks[i].b;
                    out.at(n + i, i) = x.blocks[i].c;
                    out.at(n + i, n + i) = x.blocks[i].d;
                }
            }
        },
        t);
    return out;
}

template <class T>
AffineElement<T> densify(const AffineElement<T>& e)
{
    return {densify(e.transition), e.offset};
}

// ---------------------------------------------------------------------------
// Transition algebra.

/// y = M x (y must not alias x).
template <class T>
void apply_into(const Transition<T>& t, const T* x, T* y)
{
    std::visit(
        [&](const auto& m) {
            using X = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<X, Dense<T>>) {
                for (std::size_t r = 0; r < m.width; ++r) {
                    T acc = zero_of<T>();
                    for (std::size_t c = 0; c < m.width; ++c) acc += m.at(r, c) * x[c];
                    y[r] = acc;
                }
            } else if constexpr (std::is_same_v<X, Diagonal<T>>) {
                for (std::size_t i = 0; i < m.d.size(); ++i) y[i] = m.d[i] * x[i];
            } else if constexpr (std::is_same_v<X, MomentumBlock<T>>) {
                const std::size_t n = m.p.size();
                for (std::size_t i = 0; i < n; ++i) {
                    y[i] = m.p[i] * x[i] + m.q[i] * x[n + i];
                    y[n + i] = m.r * x[n + i];
                }
            } else {
                const std::size_t n = m.blocks.size();
                for (std::size_t i = 0; i < n; ++i) {
                    const auto& b = m.blocks[i];
                    y[i] = b.a * x[i] + b.b * x[n + i];
                    y[n + i] = b.c * x[i] + b.d * x[n + i];
                }
            }
        },
        t);
}

template <class T>
std::vector<T> apply(const Transition<T>& t, const std::vector<T>& x)
{
    require(width_of(t) == x.size(), "apply: width mismatch");
    std::vector<T> y(x.size());
    apply_into(t, x.data(), y.data());
    return y;
}

/// Returns outer * inner (inner is applied first).
template <class T>
Transition<T> compose(const Transition<T>& outer, const Transition<T>& inner)
{
    const std::size_t w = width_of(outer);
    require(w == width_of(inner), "combine: width mismatch");
    if (outer.index() != inner.index()) {
        require(kind_of(outer) == TransitionKind::dense || kind_of(inner) == TransitionKind::dense,
                "combine: structured transitions of different kinds cannot be combined");
    }
    if (kind_of(outer) == TransitionKind::dense || kind_of(inner) == TransitionKind::dense) {
        const Dense<T> b = densify(outer);
        const Dense<T> a = densify(inner);
        Dense<T> out{w, std::vector<T>(w * w, zero_of<T>())};
        for (std::size_t r = 0; r < w; ++r) {
            for (std::size_t k = 0; k < w; ++k) {
                const T brk = b.at(r, k);
                for (std::size_t c = 0; c < w; ++c) out.at(r, c) += brk * a.at(k, c);
            }
        }
        return out;
    }
    switch (kind_of(outer)) {
    case TransitionKind::diagonal: {
        const auto& b = std::get<Diagonal<T>>(outer);
        const auto& a = std::get<Diagonal<T>>(inner);
        Diagonal<T> out{std::vector<T>(w)};
        for (std::size_t i = 0; i < w; ++i) out.d[i] = b.d[i] * a.d[i];
        return out;
    }
    case TransitionKind::momentum_block: {
        const auto& b = std::get<MomentumBlock<T>>(outer);
        const auto& a = std::get<MomentumBlock<T>>(inner);
        const std::size_t n = a.p.size();
        MomentumBlock<T> out{std::vector<T>(n), std::vector<T>(n), b.r * a.r};
        for (std::size_t i = 0; i < n; ++i) {
            out.p[i] = b.p[i] * a.p[i];
            out.q[i] = b.p[i] * a.q[i] + b.q[i] * a.r;
        }
        return out;
    }
    case TransitionKind::heavy_ball_block: {
        const auto& b = std::get<HeavyBallBlock<T>>(outer);
        const auto& a = std::get<HeavyBallBlock<T>>(inner);
        HeavyBallBlock<T> out{std::vector<Block2<T>>(a.blocks.size())};
        for (std::size_t i = 0; i < a.blocks.size(); ++i) {
            const auto& x = b.blocks[i];
            const auto& y = a.blocks[i];
            out.blocks[i] = {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c,
                             x.c * y.b + x.d * y.d};
        }
        return out;
    }
    default:
        break;
    }
    throw ContractError("combine: unreachable transition kind");
}

/// (a . b): apply a, then b.
template <class T>
AffineElement<T> combine(const AffineElement<T>& a, const AffineElement<T>& b)
{
    require(a.offset.size() == b.offset.size(), "combine: width mismatch");
    AffineElement<T> out{compose(b.transition, a.transition), std::vector<T>(a.offset.size())};
    apply_into(b.transition, a.offset.data(), out.offset.data());
    for (std::size_t i = 0; i < out.offset.size(); ++i) out.offset[i] += b.offset[i];
    return out;
}

template <class T = double>
AffineElement<T> identity_element(TransitionKind kind, std::size_t width)
{
    require(width >= 1, "identity_element: width must be positive");
    const std::vector<T> zeros(width, zero_of<T>());
    switch (kind) {
    case TransitionKind::dense: {
        Dense<T> d{width, std::vector<T>(width * width, zero_of<T>())};
        for (std::size_t i = 0; i < width; ++i) d.at(i, i) = one_of<T>();
        return {d, zeros};
    }
    case TransitionKind::diagonal:
        return {Diagonal<T>{std::vector<T>(width, one_of<T>())}, zeros};
    case TransitionKind::momentum_block: {
        require(width % 2 == 0, "identity_element: momentum block width must be even");
        const std::size_t n = width / 2;
        return {MomentumBlock<T>{std::vector<T>(n, one_of<T>()), std::vector<T>(n, zero_of<T>()), one_of<T>()}, zeros};
    }
    case TransitionKind::heavy_ball_block: {
        require(width % 2 == 0, "identity_element: heavy-ball block width must be even");
        Block2<T> eye{one_of<T>(), zero_of<T>(), zero_of<T>(), one_of<T>()};
        return {HeavyBallBlock<T>{std::vector<Block2<T>>(width / 2, eye)}, zeros};
    }
    }
    throw ContractError("identity_element: unknown kind");
}

// ---------------------------------------------------------------------------
// Scans.

namespace detail {

template <class T>
std::size_t validate(const std::vector<AffineElement<T>>& elements, const std::vector<T>& s0)
{
    require(!elements.empty(), "scan: element list must be nonempty");
    const std::size_t w = elements.front().offset.size();
    for (const auto& e : elements) {
        check_element(e);
        require(e.offset.size() == w, "scan: elements have non-uniform width");
    }
    require(s0.size() == w, "scan: s0 length != element width");
    return w;
}

template <class F>
void parallel_for(std::size_t begin, std::size_t end, unsigned workers, F&& f)
{
    constexpr std::size_t grain = 64;
    const std::size_t n = end > begin ? end - begin : 0;
    if (workers <= 1 || n < 2 * grain) {
        for (std::size_t i = begin; i < end; ++i) f(i);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(workers, n / grain);
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = begin + n * c / chunks;
        const std::size_t hi = begin + n * (c + 1) / chunks;
        pool.emplace_back([lo, hi, &f] {
            for (std::size_t i = lo; i < hi; ++i) f(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline std::size_t ceil_log2(std::size_t n)
{
    std::size_t k = 0;
    while ((std::size_t{1} << k) < n) ++k;
    return k;
}

/// In-place inclusive prefix over a strided view, tracking combine depth.
template <class T>
class LadnerFischer {
public:
    LadnerFischer(std::vector<AffineElement<T>>& e, std::vector<int>& depth, unsigned workers)
        : e_(e), depth_(depth), workers_(workers)
    {
    }

    // Depth ceil(log2 n).
    void p0(std::size_t lo, std::size_t stride, std::size_t n)
    {
        if (n <= 1) return;
        const std::size_t m = std::size_t{1} << (ceil_log2(n) - 1);
        p1(lo, stride, m);
        p0(lo + m * stride, stride, n - m);
        const std::size_t carry = lo + (m - 1) * stride;
        combines_ += n - m;
        parallel_for(m, n, workers_, [&](std::size_t i) { merge(carry, lo + i * stride); });
    }

    // Depth ceil(log2 n) + 1, but the last element is final at depth ceil(log2 n).
    void p1(std::size_t lo, std::size_t stride, std::size_t n)
    {
        if (n <= 1) return;
        combines_ += n / 2 + (n + 1) / 2 - 1;
        parallel_for(0, n / 2, workers_, [&](std::size_t k) { merge(lo + 2 * k * stride, lo + (2 * k + 1) * stride); });
        p0(lo + stride, 2 * stride, n / 2);
        parallel_for(1, (n + 1) / 2, workers_, [&](std::size_t k) { merge(lo + (2 * k - 1) * stride, lo + 2 * k * stride); });
    }

    [[nodiscard]] std::size_t combines() const { return combines_; }

private:
    // e[dst] = e[src] . e[dst]
    void merge(std::size_t src, std::size_t dst)
    {
        e_[dst] = combine(e_[src], e_[dst]);
        depth_[dst] = std::max(depth_[src], depth_[dst]) + 1;
    }

    std::vector<AffineElement<T>>& e_;
    std::vector<int>& depth_;
    unsigned workers_;
    std::size_t combines_{0};
};

}  // namespace detail

/// Left-to-right evaluation of s_n = M_n s_{n-1} + F_n, n = 1..L.
template <class T>
ScanOutput<T> scan_sequential(const std::vector<AffineElement<T>>& elements, const std::vector<T>& s0,
                              const ScanOptions& opts = {})
{
    const std::size_t w = detail::validate(elements, s0);
    const std::size_t len = elements.size();
    ScanOutput<T> out;
    out.length = len;
    out.width = w;
    out.states.resize(len * w);
    out.combineDepth = static_cast<int>(len);
    const T* prev = s0.data();
    for (std::size_t n = 0; n < len; ++n) {
        T* cur = out.states.data() + n * w;
        apply_into(elements[n].transition, prev, cur);
        for (std::size_t i = 0; i < w; ++i) cur[i] += elements[n].offset[i];
        prev = cur;
    }
    if (opts.keepTransitions) {
        std::vector<Transition<T>> composed;
        composed.reserve(len);
        composed.push_back(elements.front().transition);
        for (std::size_t n = 1; n < len; ++n) composed.push_back(compose(elements[n].transition, composed.back()));
        out.composedTransitions = std::move(composed);
    }
    return out;
}

/// Logarithmic-depth evaluation; same states as scan_sequential up to
/// floating-point reassociation. Output is bit-identical for any worker count.
template <class T>
ScanOutput<T> scan_parallel(const std::vector<AffineElement<T>>& elements, const std::vector<T>& s0,
                            const ScanOptions& opts = {})
{
    const std::size_t w = detail::validate(elements, s0);
    const std::size_t len = elements.size();
    std::vector<AffineElement<T>> work = elements;
    // Fold s0 into the first step: F_1 <- M_1 s0 + F_1.
    {
        std::vector<T> folded(w);
        apply_into(work[0].transition, s0.data(), folded.data());
        for (std::size_t i = 0; i < w; ++i) folded[i] += work[0].offset[i];
        work[0].offset = std::move(folded);
    }
    std::vector<int> depth(len, 0);
    detail::LadnerFischer<T> circuit(work, depth, std::max(1U, opts.workers));
    circuit.p0(0, 1, len);

    ScanOutput<T> out;
    out.length = len;
    out.width = w;
    out.states.resize(len * w);
    out.combineDepth = *std::max_element(depth.begin(), depth.end()) + 1;
    out.combines = circuit.combines();
    for (std::size_t n = 0; n < len; ++n) {
        std::copy(work[n].offset.begin(), work[n].offset.end(), out.states.begin() + static_cast<std::ptrdiff_t>(n * w));
    }
    if (opts.keepTransitions) {
        std::vector<Transition<T>> composed;
        composed.reserve(len);
        for (auto& e : work) composed.push_back(std::move(e.transition));
        out.composedTransitions = std::move(composed);
    }
    return out;
}

enum class ScanPath { parallel, sequential };

template <class T>
ScanOutput<T> run_scan(const std::vector<AffineElement<T>>& elements, const std::vector<T>& s0, ScanPath path,
                       const ScanOptions& opts = {})
{
    return path == ScanPath::parallel ? scan_parallel(elements, s0, opts) : scan_sequential(elements, s0, opts);
}

/// Real multiply/add count of one combine of two elements of the given kind.
inline std::size_t combine_flops(TransitionKind k, std::size_t w)
{
    switch (k) {
    case TransitionKind::dense: return 2 * w * w * w + 2 * w * w + w;
    case TransitionKind::diagonal: return 3 * w;
    case TransitionKind::momentum_block: return 5 * w + 1;
    case TransitionKind::heavy_ball_block: return 10 * w;
    }
    return 0;
}

/// Real multiply/add count of one sequential step (apply, then add the offset).
inline std::size_t step_flops(TransitionKind k, std::size_t w)
{
    switch (k) {
    case TransitionKind::dense: return 2 * w * w + w;
    case TransitionKind::diagonal: return 2 * w;
    case TransitionKind::momentum_block: return 3 * w;
    case TransitionKind::heavy_ball_block: return 4 * w;
    }
    return 0;
}

/// Work actually performed by a finished scan; complex scalars count 4x.
template <class T>
std::size_t scan_flops(TransitionKind k, const ScanOutput<T>& out, ScanPath path)
{
    const std::size_t scalar = std::is_same_v<T, double> ? 1 : 4;
    const std::size_t work = path == ScanPath::parallel
                                 ? out.combines * combine_flops(k, out.width) + step_flops(k, out.width)
                                 : out.length * step_flops(k, out.width);
    return scalar * work;
}

/// Expected combine depth (in levels) of scan_parallel for length L.
inline int expected_combine_depth(std::size_t len) { return static_cast<int>(detail::ceil_log2(len)) + 1; }

/// Worst |a-b| / max(|b|, floor)-style violation ratio; <= 1 means within tolerance.
template <class T>
double worst_violation(const std::vector<T>& got, const std::vector<T>& want, double rel, double absFloor)
{
    require(got.size() == want.size(), "worst_violation: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double diff = magnitude(got[i] - want[i]);
        const double allowed = std::max(rel * magnitude(want[i]), absFloor);
        worst = std::max(worst, diff / allowed);
    }
    return worst;
}

}  // namespace mssm::scan

#endif  // MSSM_AFFINE_SCAN_HPP
