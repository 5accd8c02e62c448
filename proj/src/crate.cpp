#include "ccdepth/crate.hpp"

#include <string>

#include "ccdepth/errors.hpp"

namespace ccdepth::crate {
namespace {

namespace F = torch::nn::functional;

std::string shape_str(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? ", " : "") + std::to_string(t.size(i));
  return s + ")";
}

void require_tokens(const torch::Tensor& z, const char* what) {
  if (z.dim() < 2) throw ShapeError(std::string(what) + ": token matrix must have shape (..., d, N), got " + shape_str(z));
}

void require_finite(const torch::Tensor& z, const char* what) {
  if (!torch::isfinite(z).all().item<bool>()) throw NumericError(std::string(what) + ": non-finite entries in input");
}

// Q factor of a Gaussian matrix, computed at double precision.
torch::Tensor random_orthonormal(int64_t rows, int64_t cols) {
  auto q = std::get<0>(torch::linalg_qr(torch::randn({rows, cols}, torch::kFloat64), "reduced"));
  return q;
}

// All heads at once: (K, p, d) x (.., 1, d, N) -> (.., K, p, N).
torch::Tensor project_all(const torch::Tensor& z, const SubspaceBases& bases) {
  require_tokens(z, "projection");
  if (z.size(-2) != bases.dim())
    throw ShapeError("basis dimension " + std::to_string(bases.dim()) + " does not match token dimension " +
                     std::to_string(z.size(-2)));
  return torch::matmul(bases.stacked().transpose(-1, -2), z.unsqueeze(-3));
}

double mssa_factor(const torch::Tensor& z, const SubspaceBases& bases, double eps) {
  const auto n = static_cast<double>(z.size(-1));
  return static_cast<double>(bases.subspace_dim()) / (n * eps * eps);
}

}  // namespace

SubspaceBases::SubspaceBases(torch::Tensor stacked) : stacked_(std::move(stacked)) {
  if (stacked_.dim() != 3) throw ShapeError("subspace bases must be a (K, d, p) tensor, got " + shape_str(stacked_));
}

SubspaceBases SubspaceBases::orthonormal(int64_t heads, int64_t dim, int64_t subspace_dim, torch::TensorOptions opts) {
  if (subspace_dim > dim) throw ShapeError("subspace dimension exceeds token dimension");
  std::vector<torch::Tensor> qs;
  for (int64_t k = 0; k < heads; ++k) qs.push_back(random_orthonormal(dim, subspace_dim));
  return SubspaceBases(torch::stack(qs).to(opts));
}

Dictionary::Dictionary(torch::Tensor matrix) : matrix_(std::move(matrix)) {
  if (matrix_.dim() != 2 || matrix_.size(0) != matrix_.size(1))
    throw ShapeError("dictionary must be square d x d, got " + shape_str(matrix_));
}

Dictionary Dictionary::orthogonal(int64_t dim, torch::TensorOptions opts) {
  return Dictionary(random_orthonormal(dim, dim).to(opts));
}

Dictionary Dictionary::identity(int64_t dim, torch::TensorOptions opts) { return Dictionary(torch::eye(dim, opts)); }

torch::Tensor patchify(const torch::Tensor& x, int64_t patch) {
  if (x.dim() != 4) throw ShapeError("patchify: expected a (B, C, h, w) feature map, got " + shape_str(x));
  if (patch < 1) throw ShapeError("patchify: patch size must be positive");
  if (x.size(2) % patch != 0)
    throw ShapeError("patchify: height " + std::to_string(x.size(2)) + " not divisible by patch size " +
                     std::to_string(patch));
  if (x.size(3) % patch != 0)
    throw ShapeError("patchify: width " + std::to_string(x.size(3)) + " not divisible by patch size " +
                     std::to_string(patch));
  auto unshuffled = patch == 1 ? x : F::pixel_unshuffle(x, F::PixelUnshuffleFuncOptions(patch));
  return unshuffled.flatten(2);
}

torch::Tensor unpatchify(const torch::Tensor& tokens, int64_t h, int64_t w, int64_t patch) {
  if (tokens.dim() != 3) throw ShapeError("unpatchify: expected (B, C*patch^2, N) tokens, got " + shape_str(tokens));
  if (h % patch != 0 || w % patch != 0) throw ShapeError("unpatchify: grid not divisible by patch size");
  const int64_t gh = h / patch, gw = w / patch;
  if (tokens.size(2) != gh * gw)
    throw ShapeError("unpatchify: token count " + std::to_string(tokens.size(2)) + " does not match grid " +
                     std::to_string(gh) + "x" + std::to_string(gw));
  if (tokens.size(1) % (patch * patch) != 0)
    throw ShapeError("unpatchify: token length " + std::to_string(tokens.size(1)) + " not a multiple of patch^2");
  auto grid = tokens.reshape({tokens.size(0), tokens.size(1), gh, gw});
  return patch == 1 ? grid : F::pixel_shuffle(grid, F::PixelShuffleFuncOptions(patch));
}

torch::Tensor apply_token_mlp(const torch::Tensor& tokens, const std::vector<TokenLinear>& layers) {
  auto out = tokens;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.size(1) != out.size(-2))
      throw ShapeError("token map expects input dimension " + std::to_string(l.weight.size(1)) + ", got " +
                       std::to_string(out.size(-2)));
    out = torch::matmul(l.weight, out);
    if (l.bias.defined()) out = out + l.bias.unsqueeze(-1);
    if (i + 1 < layers.size()) out = torch::gelu(out);
  }
  return out;
}

torch::Tensor patchify_embed(const torch::Tensor& x, int64_t patch, const std::vector<TokenLinear>& embedding) {
  return apply_token_mlp(patchify(x, patch), embedding);
}

torch::Tensor unpatchify_project(const torch::Tensor& z, int64_t h, int64_t w, int64_t patch,
                                 const std::vector<TokenLinear>& inverse_projection) {
  require_tokens(z, "unpatchify_project");
  if (h % patch != 0 || w % patch != 0) throw ShapeError("unpatchify_project: grid not divisible by patch size");
  if (z.size(-1) != (h / patch) * (w / patch))
    throw ShapeError("unpatchify_project: token count " + std::to_string(z.size(-1)) + " does not match grid " +
                     std::to_string(h / patch) + "x" + std::to_string(w / patch));
  return unpatchify(apply_token_mlp(z, inverse_projection), h, w, patch);
}

torch::Tensor coding_rate(const torch::Tensor& z, double eps) {
  require_tokens(z, "coding_rate");
  if (!(eps > 0)) throw DomainError("coding_rate: eps must be positive");
  require_finite(z, "coding_rate");
  const int64_t d = z.size(-2), n = z.size(-1);
  const double alpha = static_cast<double>(d) / (static_cast<double>(n) * eps * eps);
  auto gram = torch::matmul(z, z.transpose(-1, -2));
  auto m = torch::eye(d, z.options()) + alpha * gram;
  // I + alpha Z Z^T is symmetric positive definite, so Cholesky is exact and
  // logdet = 2 sum log diag(L).
  auto chol = torch::linalg_cholesky(m);
  return chol.diagonal(0, -2, -1).log().sum(-1);
}

torch::Tensor rate_reduction(const torch::Tensor& z, const SubspaceBases& bases, double eps) {
  auto projected = project_all(z, bases);  // (.., K, p, N)
  return coding_rate(z, eps) - coding_rate(projected, eps).sum(-1);
}

torch::Tensor attention_weights(const torch::Tensor& projected) {
  auto gram = torch::matmul(projected.transpose(-1, -2), projected);
  return torch::softmax(gram, -2);
}

torch::Tensor ssa(const torch::Tensor& z, const torch::Tensor& basis) {
  require_tokens(z, "ssa");
  if (basis.dim() != 2 || basis.size(0) != z.size(-2))
    throw ShapeError("ssa: basis of shape " + shape_str(basis) + " incompatible with tokens " + shape_str(z));
  auto projected = torch::matmul(basis.transpose(0, 1), z);
  return torch::matmul(projected, attention_weights(projected));
}

torch::Tensor mssa(const torch::Tensor& z, const SubspaceBases& bases, double eps, MssaScaleMode mode) {
  auto projected = project_all(z, bases);
  auto heads = torch::matmul(projected, attention_weights(projected));       // (.., K, p, N)
  auto lifted = torch::matmul(bases.stacked(), heads).sum(-3);               // (.., d, N)
  if (mode == MssaScaleMode::kSingleFactor) return lifted;
  return mssa_factor(z, bases, eps) * lifted;
}

torch::Tensor mssa_residual_step(const torch::Tensor& z, const CrateModuleParams& params) {
  const double step = params.kappa * mssa_factor(z, params.bases, params.eps);
  return (1.0 - step) * z + step * mssa(z, params.bases, params.eps, params.scale_mode);
}

torch::Tensor ista_step(const torch::Tensor& z_half, const Dictionary& dict, double eta, double lambda1) {
  require_tokens(z_half, "ista_step");
  if (z_half.size(-2) != dict.dim())
    throw ShapeError("ista_step: dictionary dimension " + std::to_string(dict.dim()) +
                     " does not match token dimension " + std::to_string(z_half.size(-2)));
  const auto& d = dict.matrix();
  auto residual = z_half - torch::matmul(d, z_half);
  return torch::relu(z_half + eta * torch::matmul(d.transpose(0, 1), residual) - eta * lambda1);
}

torch::Tensor token_layer_norm(const torch::Tensor& z, const TokenNorm& norm) {
  auto tokens_last = z.transpose(-1, -2);
  auto normed = F::layer_norm(tokens_last, F::LayerNormFuncOptions({z.size(-2)}).weight(norm.weight).bias(norm.bias));
  return normed.transpose(-1, -2);
}

torch::Tensor crate_module_forward(const torch::Tensor& z, const CrateModuleParams& params) {
  auto x = params.mssa_norm ? token_layer_norm(z, *params.mssa_norm) : z;
  auto half = mssa_residual_step(x, params);
  if (params.ista_norm) half = token_layer_norm(half, *params.ista_norm);
  return ista_step(half, params.dictionary, params.eta, params.lambda1);
}

CrateModuleImpl::CrateModuleImpl(int64_t dim, const CrateConfig& cfg) : cfg_(cfg) {
  if (dim % cfg.heads != 0) throw ShapeError("CRATE token dimension must be divisible by the head count");
  const int64_t p = dim / cfg.heads;
  bases = register_parameter("bases", SubspaceBases::orthonormal(cfg.heads, dim, p, torch::kFloat32).stacked());
  dictionary = register_parameter("dictionary", Dictionary::orthogonal(dim, torch::kFloat32).matrix());
  norm1_weight = register_parameter("norm1_weight", torch::ones({dim}));
  norm1_bias = register_parameter("norm1_bias", torch::zeros({dim}));
  norm2_weight = register_parameter("norm2_weight", torch::ones({dim}));
  norm2_bias = register_parameter("norm2_bias", torch::zeros({dim}));
}

CrateModuleParams CrateModuleImpl::params() const {
  CrateModuleParams p{SubspaceBases(bases), Dictionary(dictionary), cfg_.kappa, cfg_.eps, cfg_.eta, cfg_.lambda1,
                      cfg_.mssa_scale_mode, std::nullopt, std::nullopt};
  if (cfg_.pre_norm) {
    p.mssa_norm = TokenNorm{norm1_weight, norm1_bias};
    p.ista_norm = TokenNorm{norm2_weight, norm2_bias};
  }
  return p;
}

torch::Tensor CrateModuleImpl::forward(const torch::Tensor& z) { return crate_module_forward(z, params()); }

CrateLayerImpl::CrateLayerImpl(int64_t in_channels, int64_t dim, int64_t out_channels, int64_t patch,
                               const CrateConfig& cfg)
    : patch_(patch), dim_(dim) {
  int64_t in = in_channels * patch * patch;
  for (int i = 0; i < cfg.embed_depth; ++i) {
    embed_.push_back(register_module("embed" + std::to_string(i), torch::nn::Linear(in, dim)));
    in = dim;
  }
  for (int i = 0; i < cfg.modules_per_layer; ++i)
    modules_.push_back(register_module("module" + std::to_string(i + 1), CrateModule(dim, cfg)));
  unembed_ = register_module("unembed", torch::nn::Linear(dim, out_channels));
}

std::vector<TokenLinear> CrateLayerImpl::embedding() const {
  std::vector<TokenLinear> out;
  for (const auto& l : embed_) out.push_back({l->weight, l->bias});
  return out;
}

std::vector<TokenLinear> CrateLayerImpl::inverse_projection() const { return {{unembed_->weight, unembed_->bias}}; }

torch::Tensor CrateLayerImpl::forward(const torch::Tensor& x) {
  const int64_t gh = x.size(2) / patch_, gw = x.size(3) / patch_;
  auto z = patchify_embed(x, patch_, embedding());
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    z = modules_[i]->forward(z);
    if (observer_) observer_(static_cast<int>(i + 1), z);
  }
  // One output pixel per token: the layer's resolution is the patch grid.
  return unpatchify_project(z, gh, gw, 1, inverse_projection());
}

}  // namespace ccdepth::crate
