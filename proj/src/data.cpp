#include "dlt/data.hpp"

#include <fstream>
#include <stdexcept>

namespace dlt {

Corpus load_corpus(const std::string& path, double val_fraction,
                   std::size_t min_tokens) {
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("load_corpus: val_fraction must be in [0,1)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
  Corpus c;
  c.source = path;
  c.tokens.assign(std::istreambuf_iterator<char>(in),
                  std::istreambuf_iterator<char>());
  if (c.tokens.size() < min_tokens)
    throw std::runtime_error("load_corpus: " + path + " has " +
                             std::to_string(c.tokens.size()) +
                             " tokens, need at least " +
                             std::to_string(min_tokens));
  const auto val = static_cast<std::size_t>(double(c.tokens.size()) * val_fraction);
  c.train_end = c.tokens.size() - val;
  return c;
}

Batch sample_batch(const Corpus& corpus, int batch_size, int context_length,
                   Rng& rng) {
  if (batch_size < 1 || context_length < 1)
    throw std::invalid_argument("sample_batch: batch_size and context_length must be >= 1");
  // window [s, s+T) plus the shifted target needs indices up to s+T < train_end
  if (corpus.train_end < static_cast<std::size_t>(context_length) + 1)
    throw std::runtime_error("sample_batch: training range shorter than one window");
  const std::uint64_t n_starts = corpus.train_end - context_length;
  Batch b;
  b.inputs.resize(batch_size, context_length);
  b.targets.resize(batch_size, context_length);
  for (int i = 0; i < batch_size; ++i) {
    const auto s = static_cast<std::size_t>(rng.below(n_starts));
    for (int t = 0; t < context_length; ++t) {
      b.inputs(i, t) = corpus.tokens[s + t];
      b.targets(i, t) = corpus.tokens[s + t + 1];
    }
  }
  return b;
}

std::vector<Batch> validation_batches(const Corpus& corpus, int batch_size,
                                      int context_length) {
  if (corpus.val_size() < static_cast<std::size_t>(context_length) + 1)
    throw std::runtime_error("validation_batches: validation split shorter than one window");
  std::vector<std::size_t> windows;
  for (std::size_t s = corpus.train_end; s + context_length < corpus.size();
       s += context_length) {
    windows.push_back(s);
  }
  std::vector<Batch> out;
  for (std::size_t w = 0; w < windows.size(); w += batch_size) {
    const int rows = static_cast<int>(std::min<std::size_t>(batch_size, windows.size() - w));
    Batch b;
    b.inputs.resize(rows, context_length);
    b.targets.resize(rows, context_length);
    for (int i = 0; i < rows; ++i) {
      const std::size_t s = windows[w + i];
      for (int t = 0; t < context_length; ++t) {
        b.inputs(i, t) = corpus.tokens[s + t];
        b.targets(i, t) = corpus.tokens[s + t + 1];
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace dlt
