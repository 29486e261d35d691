#include "cellseg/label_map.hpp"

#include <algorithm>
#include <string>
#include <unordered_map>

namespace cellseg {

std::uint32_t InstanceLabelMap::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

std::vector<std::size_t> InstanceLabelMap::areas() const {
  std::vector<std::size_t> a(max_label() + 1, 0);
  for (auto l : labels) ++a[l];
  return a;
}

std::vector<std::uint32_t> InstanceLabelMap::ids() const {
  std::vector<std::uint32_t> out;
  const auto a = areas();
  for (std::uint32_t l = 1; l < a.size(); ++l) {
    if (a[l] > 0) out.push_back(l);
  }
  return out;
}

void InstanceLabelMap::check_typed(std::uint32_t n_types) const {
  if (labels.size() != height * width) throw DataError("label map size does not match its dimensions");
  for (auto id : ids()) {
    auto it = types.find(id);
    if (it == types.end()) throw DataError("instance " + std::to_string(id) + " has no type");
    if (it->second == 0 || (n_types > 0 && it->second > n_types)) {
      throw DataError("instance " + std::to_string(id) + " has type " + std::to_string(it->second) +
                      " outside 1.." + (n_types ? std::to_string(n_types) : std::string("inf")));
    }
  }
}

void InstanceLabelMap::validate(std::uint32_t n_types) const {
  check_typed(n_types);
  const auto present = ids();
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i] != i + 1) throw DataError("instance IDs are not consecutive: missing " + std::to_string(i + 1));
  }
  if (types.size() != present.size()) throw DataError("type table lists instances absent from the map");
}

InstanceLabelMap renumber_raster(const InstanceLabelMap& m) {
  InstanceLabelMap out(m.height, m.width);
  std::unordered_map<std::uint32_t, std::uint32_t> remap;
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const auto l = m.labels[i];
    if (l == 0) continue;
    auto [it, inserted] = remap.try_emplace(l, static_cast<std::uint32_t>(remap.size() + 1));
    out.labels[i] = it->second;
    if (inserted) {
      auto t = m.types.find(l);
      if (t != m.types.end()) out.types[it->second] = t->second;
    }
  }
  return out;
}

}  // namespace cellseg
