#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sit/extractors.hpp"

namespace sit {

/// Line-delimited JSON conversation with a child process over pipes. One
/// request object per line on the child's stdin, one response per line on
/// its stdout; a response carrying "error" raises RuntimeFailure. Calls
/// are serialized, so the adapter stays safe under concurrent use.
///
/// Requests: hello, extract, extract_vjp, embed_image, embed_image_vjp,
/// embed_text. Images travel as flat channel-planar arrays with h/w/c.
class WorkerProcess {
 public:
  explicit WorkerProcess(const std::string& command);
  ~WorkerProcess();
  WorkerProcess(const WorkerProcess&) = delete;
  WorkerProcess& operator=(const WorkerProcess&) = delete;

  std::string call_line(const std::string& request_json);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Structure/semantic extractor backed by a worker that wraps a pretrained
/// vision-transformer checkpoint. Feature shapes, the key-extraction layer
/// and the expected input size come from the hello handshake; gradients
/// are spliced into the tape through the worker's VJP ops.
class WorkerExtractor final : public StructureSemanticExtractor {
 public:
  explicit WorkerExtractor(const std::string& command);

  using StructureSemanticExtractor::extract;

  int layer_index() const override { return layer_; }
  std::pair<int, int> input_size() const override { return {in_h_, in_w_}; }
  int n_tokens(int h, int w) const override;
  int key_dim(int c) const override;
  int cls_dim(int c) const override;

  BundleVar extract(ad::Tape& tape, ad::Var x, int h, int w, int c) const override;

 private:
  std::shared_ptr<WorkerProcess> proc_;
  int layer_ = 0, in_h_ = 0, in_w_ = 0, n_ = 0, dk_ = 0, dc_ = 0;
};

/// Text/image embedder backed by a worker wrapping one or more pretrained
/// text-image checkpoints. The worker returns one raw vector per model;
/// ensemble normalization and concatenation happen here, on the tape.
class WorkerEmbedder final : public TextImageEmbedder {
 public:
  explicit WorkerEmbedder(const std::string& command);

  using TextImageEmbedder::embed_image;

  std::vector<std::string> model_ids() const override { return model_ids_; }
  int embed_dim() const override;
  std::pair<int, int> input_size() const override { return {in_h_, in_w_}; }

  ad::Var embed_image(ad::Tape& tape, ad::Var x, int h, int w, int c) const override;
  EmbeddingVector embed_text(const std::string& prompt) const override;

 private:
  std::shared_ptr<WorkerProcess> proc_;
  std::vector<std::string> model_ids_;
  std::vector<int> part_dims_;
  int in_h_ = 0, in_w_ = 0;
};

}  // namespace sit
