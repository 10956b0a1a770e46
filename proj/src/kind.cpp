#include "pobj/kind.hpp"

namespace pobj {

KindHandle KindRegistry::add(KindDescriptor descriptor) {
  const std::uint32_t id = descriptor.kind_id;
  if (!descriptor.constructor) {
    throw RegistrationError("kind " + std::to_string(id) + " has no constructor");
  }
  auto [it, inserted] = kinds_.emplace(id, std::move(descriptor));
  if (!inserted) {
    throw RegistrationError("duplicate kind id " + std::to_string(id) + " (already registered as " +
                            it->second.name + ")");
  }
  return KindHandle{id};
}

const KindDescriptor* KindRegistry::find(std::uint32_t kind_id) const {
  auto it = kinds_.find(kind_id);
  return it == kinds_.end() ? nullptr : &it->second;
}

std::vector<std::uint32_t> KindRegistry::ids() const {
  std::vector<std::uint32_t> out;
  out.reserve(kinds_.size());
  for (const auto& [id, _] : kinds_) out.push_back(id);
  return out;
}

}  // namespace pobj
