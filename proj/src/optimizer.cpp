#include "nodegam/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "nodegam/errors.hpp"
#include "nodegam/kernels.hpp"

namespace nodegam {

QhAdam::QhAdam(const QhAdamConfig& cfg, const std::vector<ParamBlock>& blocks) : cfg_(cfg) {
  m_.resize(blocks.size());
  v_.resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    m_[b].assign(blocks[b].size, 0.0);
    v_[b].assign(blocks[b].size, 0.0);
  }
}

void QhAdam::step(const std::vector<ParamBlock>& blocks, const Gradients& grads, double lr,
                  const std::vector<std::uint8_t>* frozen) {
  if (blocks.size() != m_.size() || grads.by_block.size() != m_.size())
    throw std::invalid_argument("QhAdam::step: block count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto& K = kernels::ops();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (frozen && (*frozen)[b]) continue;
    const std::vector<double>& g = grads.by_block[b];
    if (g.size() != blocks[b].size)
      throw std::invalid_argument("QhAdam::step: gradient size mismatch");
    for (double v : g)
      if (!std::isfinite(v))
        throw numeric_error("QhAdam::step: non-finite gradient in block " + blocks[b].name);
    K.qhadam_update(blocks[b].data, g.data(), m_[b].data(), v_[b].data(), g.size(), lr,
                    cfg_.beta1, cfg_.beta2, cfg_.nu1, cfg_.nu2, cfg_.eps, bc1, bc2);
  }
}

}  // namespace nodegam
