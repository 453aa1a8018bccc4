#include "nucleoforge/postproc.hpp"

namespace nucleoforge {

void PostprocConfig::validate() const {
    if (!(np_threshold > 0.0 && np_threshold < 1.0))
        throw ParameterError("np_threshold must lie in (0, 1)");
    if (min_size < 0) throw ParameterError("min_size must be non-negative");
    if (!(marker_threshold > 0.0 && marker_threshold < 1.0))
        throw ParameterError("marker_threshold must lie in (0, 1)");
    if (connectivity != 4 && connectivity != 8)
        throw ParameterError("connectivity must be 4 or 8");
}

InstanceMap remove_small(const InstanceMap& inst, int min_size) {
    const InstanceIndex index(inst);
    std::vector<std::int64_t> area(index.size(), 0);
    for (Index i = 0; i < inst.size(); ++i) {
        const auto s = index.slot(inst.data()[i]);
        if (s >= 0) ++area[static_cast<std::size_t>(s)];
    }
    std::vector<std::int32_t> relabel(index.size(), 0);
    std::int32_t next = 0;
    InstanceMap out = InstanceMap::Zero(inst.rows(), inst.cols());
    for (Index i = 0; i < inst.size(); ++i) {
        const auto s = index.slot(inst.data()[i]);
        if (s < 0 || area[static_cast<std::size_t>(s)] < min_size) continue;
        auto& id = relabel[static_cast<std::size_t>(s)];
        if (!id) id = ++next;
        out.data()[i] = id;
    }
    return out;
}

}  // namespace nucleoforge
