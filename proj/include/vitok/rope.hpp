#pragma once

#include <array>

#include "vitok/config.hpp"
#include "vitok/tape.hpp"

namespace vitok {

// (t, y, x) per token, temporal-major then row-major spatial — the same
// traversal the tubelet embedding uses.
inline std::vector<std::array<int, 3>> grid_positions(int tq, int hp, int wp) {
    std::vector<std::array<int, 3>> pos;
    pos.reserve(static_cast<size_t>(tq) * hp * wp);
    for (int t = 0; t < tq; ++t)
        for (int y = 0; y < hp; ++y)
            for (int x = 0; x < wp; ++x) pos.push_back({t, y, x});
    return pos;
}

struct RopeTables {
    Tensor cos, sin;  // (L, 3 * pairs_per_axis); empty when nothing rotates
    int pairs_per_axis = 0;
};

// Axial rotary tables. The head dim is split into three contiguous groups of
// floor(d_head/6) pairs for the (t, y, x) axes; leftover dims (when 6 does
// not divide d_head) pass through unrotated. Pair i of an axis turns by
// pos_axis * 10000^(-i / pairs_per_axis).
inline RopeTables rope_tables(const std::vector<std::array<int, 3>>& positions, int d_head) {
    if (d_head % 2) throw std::invalid_argument("d_head must be even for rotary pairs");
    RopeTables rt;
    rt.pairs_per_axis = d_head / 6;
    int n = rt.pairs_per_axis;
    if (n == 0) return rt;
    int L = static_cast<int>(positions.size());
    rt.cos = Tensor({L, 3 * n});
    rt.sin = Tensor({L, 3 * n});
    std::vector<double> theta(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) theta[static_cast<size_t>(i)] = std::pow(10000.0, -2.0 * i / (2.0 * n));
    for (int l = 0; l < L; ++l)
        for (int axis = 0; axis < 3; ++axis)
            for (int i = 0; i < n; ++i) {
                double ang = positions[static_cast<size_t>(l)][static_cast<size_t>(axis)] *
                             theta[static_cast<size_t>(i)];
                size_t at = static_cast<size_t>(l) * (3 * n) + static_cast<size_t>(axis) * n + i;
                rt.cos[at] = std::cos(ang);
                rt.sin[at] = std::sin(ang);
            }
    round_to_precision(rt.cos);
    round_to_precision(rt.sin);
    return rt;
}

// Rotate (B, heads, L, d_head) q or k; identity when d_head < 6.
inline NodeId rope_rotate(Graph& g, NodeId qk, const RopeTables& rt) {
    if (rt.pairs_per_axis == 0) return qk;
    return g.rope3d(qk, rt.cos, rt.sin);
}

}  // namespace vitok
