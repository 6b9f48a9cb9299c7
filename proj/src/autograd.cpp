#include "duoformer/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace duo {

namespace {

template <typename Scalar>
std::vector<Node<Scalar>*> topological_order(Node<Scalar>* root) {
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  // (node, next parent index) frames for an iterative post-order walk.
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  Node<Scalar>* root = loss.node().get();
  const auto order = topological_order(root);
  for (Node<Scalar>* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
  root->grad_buffer()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->is_leaf() || n->grad.size() == 0) continue;
    n->backward(*n);
    n->grad.resize(0);
  }
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>> leaves = params;
  for (auto& p : leaves) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor<double> loss = f();
  backward(loss);

  GradCheckResult result;
  result.per_param.assign(leaves.size(), 0.0);
  Rng rng(options.seed);
  const double h = options.step;
  for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
    auto& p = leaves[pi];
    const Index n = p.numel();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.samples_per_param > 0 && options.samples_per_param < n) {
      for (int i = 0; i < options.samples_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(static_cast<std::uint64_t>(n - i))]);
      }
      coords.resize(static_cast<std::size_t>(options.samples_per_param));
    }
    const Buffer<double> analytic =
        p.has_grad() ? Buffer<double>(p.grad()) : Buffer<double>::Zero(n);
    for (Index c : coords) {
      const double saved = p.data()[c];
      double plus, minus;
      std::uint64_t sig_plus = 0, sig_minus = 0, sig_base = 0;
      {
        NoGradGuard guard;
        {
          BranchTrace trace;
          p.mutable_data()[c] = saved + h;
          plus = f().item();
          sig_plus = trace.signature();
        }
        {
          BranchTrace trace;
          p.mutable_data()[c] = saved - h;
          minus = f().item();
          sig_minus = trace.signature();
        }
        p.mutable_data()[c] = saved;
        if (options.skip_kinks) {
          BranchTrace trace;
          f();
          sig_base = trace.signature();
        }
      }
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite loss while perturbing coordinate " +
                           std::to_string(c));
      }
      if (options.skip_kinks && (sig_plus != sig_base || sig_minus != sig_base)) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[c] * options.analytic_scale, numeric);
      result.per_param[pi] = std::max(result.per_param[pi], err);
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace duo
