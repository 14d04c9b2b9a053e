#include "xfe/field.hpp"

#include "xfe/ad/ops.hpp"

namespace xfe::model {

template <class T>
Field<T>::Field(const encoding::HashGridConfig& enc, const LineformerConfig& cfg, double scale, Rng& rng)
    : encoder(enc, rng), net(cfg, rng), density_scale(static_cast<T>(scale)) {
  if (enc.channels() != cfg.channels) {
    throw ConfigError("encoder produces " + std::to_string(enc.channels()) + " channels but the lineformer expects " +
                      std::to_string(cfg.channels));
  }
  if (!(scale > 0.0)) throw ConfigError("density scale must be positive");
}

template <class T>
std::vector<ad::Parameter<T>*> Field<T>::parameters() {
  std::vector<ad::Parameter<T>*> out{&encoder.table};
  for (auto* p : net.parameters()) out.push_back(p);
  return out;
}

template <class T>
std::size_t Field<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <class T>
ad::Var Field<T>::density(ad::Binder<T>& b, std::span<const geometry::Vec3> normalized, std::size_t per_sequence) {
  const ad::Var features = encoding::encode(b.tape(), encoder, b(encoder.table), normalized);
  return ad::scale(b.tape(), forward(b, net, features, per_sequence), density_scale);
}

template struct Field<float>;
template struct Field<double>;

}  // namespace xfe::model
