#include "gina/codebook.hpp"

#include <cmath>
#include <stdexcept>

namespace gina {

namespace {

class StraightThrough : public torch::autograd::Function<StraightThrough> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* /*ctx*/, const torch::Tensor& e,
                               const torch::Tensor& z) {
    (void)e;
    return z.detach().clone();
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* /*ctx*/,
                                                 torch::autograd::variable_list grad) {
    return {grad[0], torch::Tensor()};
  }
};

}  // namespace

CodebookImpl::CodebookImpl(std::int64_t size_, std::int64_t dim_, bool l2)
    : size(size_), dim(dim_), l2_normalized(l2) {
  if (size <= 0 || dim <= 0) throw std::invalid_argument("codebook size and dim must be positive");
  // Fan-in variance scaling with scale 1, uniform distribution.
  const double limit = std::sqrt(3.0 / static_cast<double>(dim));
  entries = register_parameter("entries", torch::empty({size, dim}).uniform_(-limit, limit));
  renormalize();
}

torch::Tensor CodebookImpl::normalize(const torch::Tensor& e) const {
  if (!l2_normalized) return e;
  return e / e.norm(2, -1, true).clamp_min(1e-12);
}

QuantizedLatents CodebookImpl::quantize(const torch::Tensor& e) const {
  if (e.size(-1) != dim) {
    throw std::invalid_argument("quantize: embedding dim " + std::to_string(e.size(-1)) +
                                " does not match codebook dim " + std::to_string(dim));
  }
  if (!torch::isfinite(e).all().item<bool>()) {
    throw std::invalid_argument("quantize: non-finite embedding");
  }
  auto flat = e.detach().reshape({-1, dim}).to(entries.scalar_type());
  auto table = entries.detach();
  auto idx = torch::empty({flat.size(0)}, torch::kInt64);
  // Exact squared distances, chunked so the [cells, K, D] difference stays small.
  const std::int64_t chunk = std::max<std::int64_t>(1, (1 << 22) / (size * dim));
  for (std::int64_t start = 0; start < flat.size(0); start += chunk) {
    const auto end = std::min(flat.size(0), start + chunk);
    auto diff = flat.slice(0, start, end).unsqueeze(1) - table.unsqueeze(0);
    auto d2 = diff.pow(2).sum(-1);
    idx.slice(0, start, end).copy_(d2.argmin(1));
  }
  auto shape = e.sizes().vec();
  shape.pop_back();
  QuantizedLatents q;
  q.indices = idx.view(shape);
  q.vectors = entries.index_select(0, idx).view(e.sizes());
  return q;
}

torch::Tensor CodebookImpl::lookup(const torch::Tensor& indices) const {
  if (indices.numel() > 0) {
    const auto lo = indices.min().item<std::int64_t>();
    const auto hi = indices.max().item<std::int64_t>();
    if (lo < 0 || hi >= size) {
      throw std::out_of_range("codebook index out of range [0, " + std::to_string(size) +
                              "): got " + std::to_string(lo < 0 ? lo : hi));
    }
  }
  auto flat = indices.reshape({-1}).to(torch::kInt64);
  auto shape = indices.sizes().vec();
  shape.push_back(dim);
  return entries.index_select(0, flat).view(shape);
}

void CodebookImpl::renormalize() {
  if (!l2_normalized) return;
  torch::NoGradGuard guard;
  auto norms = entries.norm(2, -1, true);
  auto off = (norms - 1.0).abs() > 1e-6;
  entries.copy_(torch::where(off, entries / norms.clamp_min(1e-12), entries));
}

std::int64_t CodebookImpl::restart_dead(const torch::Tensor& usage, const torch::Tensor& embeddings,
                                       at::Generator& gen) {
  auto dead = (usage == 0).nonzero().squeeze(1);
  const auto n = dead.size(0);
  if (n == 0 || embeddings.size(0) == 0) return 0;
  auto src = embeddings.detach().reshape({-1, dim}).to(entries.scalar_type());
  // Without replacement while there are enough embeddings, then cycle.
  auto order = torch::randperm(src.size(0), gen);
  auto pick = order.index({torch::arange(n) % src.size(0)});
  torch::NoGradGuard guard;
  entries.index_copy_(0, dead, src.index_select(0, pick));
  renormalize();
  return n;
}

torch::Tensor straight_through(const torch::Tensor& e, const torch::Tensor& z) {
  return StraightThrough::apply(e, z);
}

torch::Tensor vq_loss(const torch::Tensor& e, const torch::Tensor& z, double commitment) {
  if (e.sizes() != z.sizes()) throw std::invalid_argument("vq_loss: shape mismatch");
  auto codebook_term = (e.detach() - z).pow(2).sum(-1).mean();
  auto commit_term = (z.detach() - e).pow(2).sum(-1).mean();
  return codebook_term + commitment * commit_term;
}

torch::Tensor code_usage(const torch::Tensor& indices, std::int64_t size) {
  return torch::bincount(indices.reshape({-1}).to(torch::kInt64), {}, size);
}

}  // namespace gina
