#include "nucleoforge/targets.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

namespace nucleoforge {

InstanceIndex::InstanceIndex(const LabelMap& labels) {
    std::int32_t max_id = 0;
    for (Index i = 0; i < labels.size(); ++i) max_id = std::max(max_id, labels.data()[i]);
    lookup_.assign(static_cast<std::size_t>(max_id) + 1, 0);
    for (Index i = 0; i < labels.size(); ++i) {
        const auto id = labels.data()[i];
        if (id > 0) lookup_[static_cast<std::size_t>(id)] = 1;
    }
    for (std::size_t id = 1; id < lookup_.size(); ++id) {
        if (lookup_[id]) {
            ids_.push_back(static_cast<std::int32_t>(id));
            lookup_[id] = static_cast<std::int32_t>(ids_.size());
        }
    }
}

std::ptrdiff_t InstanceIndex::slot(std::int32_t id) const {
    if (id <= 0 || static_cast<std::size_t>(id) >= lookup_.size()) return -1;
    return static_cast<std::ptrdiff_t>(lookup_[static_cast<std::size_t>(id)]) - 1;
}

namespace {

struct DisjointSet {
    std::vector<std::int32_t> parent;

    std::int32_t make() {
        parent.push_back(static_cast<std::int32_t>(parent.size()));
        return parent.back();
    }
    std::int32_t find(std::int32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) std::swap(a, b);
        parent[a] = b;
    }
};

}  // namespace

InstanceMap connected_components(const Mask& mask, int connectivity) {
    if (connectivity != 4 && connectivity != 8)
        throw ParameterError("connectivity must be 4 or 8");
    const Index h = mask.rows(), w = mask.cols();
    InstanceMap provisional = InstanceMap::Zero(h, w);
    DisjointSet sets;
    sets.make();  // slot 0 is background

    // Already-visited neighbours in raster order; 4-connectivity uses the first two.
    constexpr int offs[4][2] = {{0, -1}, {-1, 0}, {-1, -1}, {-1, 1}};
    const int n_offsets = connectivity == 8 ? 4 : 2;

    for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) {
            if (!mask(r, c)) continue;
            std::int32_t label = 0;
            for (int k = 0; k < n_offsets; ++k) {
                const Index rr = r + offs[k][0], cc = c + offs[k][1];
                if (rr < 0 || cc < 0 || cc >= w) continue;
                const auto nb = provisional(rr, cc);
                if (!nb) continue;
                if (!label)
                    label = nb;
                else
                    sets.unite(label, nb);
            }
            provisional(r, c) = label ? label : sets.make();
        }
    }

    // Final ids follow the raster order of each set's first pixel.
    std::vector<std::int32_t> final_id(sets.parent.size(), 0);
    std::int32_t next = 0;
    for (Index i = 0; i < provisional.size(); ++i) {
        auto& v = provisional.data()[i];
        if (!v) continue;
        const auto root = sets.find(v);
        if (!final_id[root]) final_id[root] = ++next;
        v = final_id[root];
    }
    return provisional;
}

Centroid center_of_mass(const InstanceMap& inst, std::int32_t id) {
    double sr = 0.0, sc = 0.0;
    std::size_t n = 0;
    for (Index r = 0; r < inst.rows(); ++r)
        for (Index c = 0; c < inst.cols(); ++c)
            if (inst(r, c) == id) {
                sr += static_cast<double>(r);
                sc += static_cast<double>(c);
                ++n;
            }
    if (!n || id <= 0) throw MissingInstanceError("instance " + std::to_string(id) + " not present");
    return {sr / static_cast<double>(n), sc / static_cast<double>(n)};
}

Mask np_target(const InstanceMap& inst) {
    return (inst > 0).cast<std::uint8_t>();
}

namespace detail {

std::vector<InstanceGeometry> instance_geometry(const InstanceMap& inst,
                                                const InstanceIndex& index) {
    constexpr Index kNone = std::numeric_limits<Index>::max();
    std::vector<InstanceGeometry> geom(index.size());
    for (auto& g : geom) g.origin_row = g.origin_col = kNone;
    for (Index r = 0; r < inst.rows(); ++r)
        for (Index c = 0; c < inst.cols(); ++c) {
            const auto s = index.slot(inst(r, c));
            if (s < 0) continue;
            auto& g = geom[static_cast<std::size_t>(s)];
            g.origin_row = std::min(g.origin_row, r);
            g.origin_col = std::min(g.origin_col, c);
        }
    // Integer offset sums, exact in double for any realistic tile.
    std::vector<double> sr(index.size(), 0.0), sc(index.size(), 0.0), n(index.size(), 0.0);
    for (Index r = 0; r < inst.rows(); ++r)
        for (Index c = 0; c < inst.cols(); ++c) {
            const auto s = index.slot(inst(r, c));
            if (s < 0) continue;
            const auto& g = geom[static_cast<std::size_t>(s)];
            sr[static_cast<std::size_t>(s)] += static_cast<double>(r - g.origin_row);
            sc[static_cast<std::size_t>(s)] += static_cast<double>(c - g.origin_col);
            n[static_cast<std::size_t>(s)] += 1.0;
        }
    for (std::size_t i = 0; i < geom.size(); ++i) geom[i].local = {sr[i] / n[i], sc[i] / n[i]};
    for (Index r = 0; r < inst.rows(); ++r)
        for (Index c = 0; c < inst.cols(); ++c) {
            const auto s = index.slot(inst(r, c));
            if (s < 0) continue;
            auto& g = geom[static_cast<std::size_t>(s)];
            g.min_dx = std::min(g.min_dx, g.dx(c));
            g.max_dx = std::max(g.max_dx, g.dx(c));
            g.min_dy = std::min(g.min_dy, g.dy(r));
            g.max_dy = std::max(g.max_dy, g.dy(r));
        }
    return geom;
}

}  // namespace detail

TypedInstances majority_types(const InstanceMap& inst, const ClassMap& cls, int num_classes) {
    if (!same_extent(inst, cls)) throw ShapeError("instance and class maps differ in extent");
    const InstanceIndex index(inst);
    const auto C = static_cast<std::size_t>(num_classes);
    std::vector<std::int64_t> votes(index.size() * (C + 1), 0);
    std::vector<std::int64_t> area(index.size(), 0);
    for (Index i = 0; i < inst.size(); ++i) {
        const auto s = index.slot(inst.data()[i]);
        if (s < 0) continue;
        const auto k = cls.data()[i];
        if (k < 0 || k > num_classes)
            throw LabelError("class id " + std::to_string(k) + " outside 0.." +
                             std::to_string(num_classes));
        ++votes[static_cast<std::size_t>(s) * (C + 1) + static_cast<std::size_t>(k)];
        ++area[static_cast<std::size_t>(s)];
    }
    TypedInstances out{inst, {}, {}};
    for (std::size_t s = 0; s < index.size(); ++s) {
        int best = 0;
        std::int64_t best_votes = 0;
        for (std::size_t k = 1; k <= C; ++k) {
            const auto v = votes[s * (C + 1) + k];
            if (v > best_votes) {
                best = static_cast<int>(k);
                best_votes = v;
            }
        }
        const auto id = index.ids()[s];
        out.types[id] = best;
        out.scores[id] = static_cast<double>(best_votes) / static_cast<double>(area[s]);
    }
    return out;
}

namespace {

class PortableRandom {
public:
    explicit PortableRandom(std::uint64_t seed) : engine_(seed) {}

    // 53-bit uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [lo, hi], by rejection.
    std::int64_t integer(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % span;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }
    // Unit direction from a point in the unit disk.
    std::pair<double, double> direction() {
        while (true) {
            const double x = uniform(-1.0, 1.0), y = uniform(-1.0, 1.0);
            const double n2 = x * x + y * y;
            if (n2 > 1e-6 && n2 <= 1.0) {
                const double n = std::sqrt(n2);
                return {x / n, y / n};
            }
        }
    }

private:
    std::mt19937_64 engine_;
};

struct Pixel {
    Index r, c;
};

struct Ellipse {
    double r0, c0, a, b, ux, uy;  // centre, semi-axes, unit major axis (row, col)

    double level(double r, double c) const {
        const double dr = r - r0, dc = c - c0;
        const double along = dr * ux + dc * uy;
        const double across = -dr * uy + dc * ux;
        return (along / a) * (along / a) + (across / b) * (across / b);
    }
};

bool clear_of_others(const InstanceMap& inst, const std::vector<Pixel>& pixels, int gap) {
    const Index h = inst.rows(), w = inst.cols();
    for (const auto& p : pixels) {
        for (Index dr = -gap; dr <= gap; ++dr)
            for (Index dc = -gap; dc <= gap; ++dc) {
                const Index r = p.r + dr, c = p.c + dc;
                if (r < 0 || c < 0 || r >= h || c >= w) continue;
                if (inst(r, c)) return false;
            }
    }
    return true;
}

std::vector<Pixel> rasterize(const Ellipse& e, Index h, Index w) {
    std::vector<Pixel> out;
    const auto ext = static_cast<Index>(std::ceil(e.a));
    const auto rc = static_cast<Index>(std::floor(e.r0)), cc = static_cast<Index>(std::floor(e.c0));
    for (Index r = rc - ext - 1; r <= rc + ext + 1; ++r)
        for (Index c = cc - ext - 1; c <= cc + ext + 1; ++c) {
            if (e.level(static_cast<double>(r), static_cast<double>(c)) > 1.0) continue;
            if (r < 0 || c < 0 || r >= h || c >= w) return {};
            out.push_back({r, c});
        }
    return out;
}

}  // namespace

SynthLabels synth_instances(std::uint64_t seed, Index height, Index width, int n,
                            int num_classes, const SynthOptions& opts) {
    if (n < 0) throw ParameterError("blob count must be non-negative");
    if (n > 0 && num_classes < 1) throw ParameterError("need at least one class");
    if (!(opts.min_axis > 0.0 && opts.max_axis >= opts.min_axis && opts.max_aspect >= 1.0))
        throw ParameterError("invalid blob axis bounds");
    SynthLabels out{InstanceMap::Zero(height, width), ClassMap::Zero(height, width)};
    PortableRandom rng(seed);

    const auto random_ellipse = [&](double a_lo, double a_hi, bool round) {
        Ellipse e{};
        e.a = rng.uniform(a_lo, a_hi);
        e.b = round ? e.a : rng.uniform(std::max(a_lo, e.a / opts.max_aspect), e.a);
        std::tie(e.ux, e.uy) = rng.direction();
        e.r0 = rng.uniform(0.0, static_cast<double>(height));
        e.c0 = rng.uniform(0.0, static_cast<double>(width));
        return e;
    };

    std::int32_t next_id = 0;
    int placed = 0;
    while (placed < n) {
        const bool pair = opts.touching_pairs && n - placed >= 2;
        bool ok = false;
        for (int attempt = 0; attempt < opts.max_attempts && !ok; ++attempt) {
            if (!pair) {
                const Ellipse e = random_ellipse(opts.min_axis, opts.max_axis, false);
                const auto pixels = rasterize(e, height, width);
                if (pixels.empty() || !clear_of_others(out.inst, pixels, opts.gap)) continue;
                const auto cls = static_cast<std::int32_t>(rng.integer(1, num_classes));
                ++next_id;
                for (const auto& p : pixels) {
                    out.inst(p.r, p.c) = next_id;
                    out.cls(p.r, p.c) = cls;
                }
                ok = true;
            } else {
                // Two overlapping discs; shared pixels go to the disc with the
                // smaller normalised radius, giving a common boundary.
                Ellipse first = random_ellipse(opts.min_axis, opts.max_axis, true);
                Ellipse second = first;
                second.a = second.b = rng.uniform(opts.min_axis, opts.max_axis);
                const double sep = 0.8 * (first.a + second.a);
                second.r0 = first.r0 + sep * first.ux;
                second.c0 = first.c0 + sep * first.uy;
                auto p1 = rasterize(first, height, width);
                auto p2 = rasterize(second, height, width);
                if (p1.empty() || p2.empty()) continue;
                std::vector<Pixel> all = p1;
                all.insert(all.end(), p2.begin(), p2.end());
                if (!clear_of_others(out.inst, all, opts.gap)) continue;
                const auto c1 = static_cast<std::int32_t>(rng.integer(1, num_classes));
                const auto c2 = static_cast<std::int32_t>(rng.integer(1, num_classes));
                const std::int32_t id1 = next_id + 1, id2 = next_id + 2;
                for (const auto& p : all) {
                    const double l1 = first.level(static_cast<double>(p.r), static_cast<double>(p.c));
                    const double l2 = second.level(static_cast<double>(p.r), static_cast<double>(p.c));
                    const bool to_first = l1 <= l2;
                    out.inst(p.r, p.c) = to_first ? id1 : id2;
                    out.cls(p.r, p.c) = to_first ? c1 : c2;
                }
                next_id += 2;
                ok = true;
            }
        }
        if (!ok)
            throw CapacityError("could not place blob " + std::to_string(placed + 1) + " of " +
                                std::to_string(n) + " after " +
                                std::to_string(opts.max_attempts) + " attempts");
        placed += pair ? 2 : 1;
    }
    return out;
}

}  // namespace nucleoforge
