#include "sit/worker_adapter.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include <nlohmann/json.hpp>

#include "sit/errors.hpp"

namespace sit {

using nlohmann::json;

// ---------- WorkerProcess ----------

struct WorkerProcess::Impl {
  pid_t pid = -1;
  int to_child = -1;
  int from_child = -1;
  std::string command;
  std::string buffer;
  std::mutex mu;

  void close_all() {
    if (to_child >= 0) close(to_child);
    if (from_child >= 0) close(from_child);
    to_child = from_child = -1;
    if (pid > 0) {
      int status = 0;
      waitpid(pid, &status, 0);
      pid = -1;
    }
  }
};

WorkerProcess::WorkerProcess(const std::string& command) : impl_(std::make_unique<Impl>()) {
  impl_->command = command;
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
    throw RuntimeFailure("worker: pipe() failed: " + std::string(std::strerror(errno)));
  pid_t pid = fork();
  if (pid < 0) throw RuntimeFailure("worker: fork() failed");
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), (char*)nullptr);
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  impl_->pid = pid;
  impl_->to_child = in_pipe[1];
  impl_->from_child = out_pipe[0];
}

WorkerProcess::~WorkerProcess() {
  if (impl_) impl_->close_all();
}

std::string WorkerProcess::call_line(const std::string& request_json) {
  std::scoped_lock lock(impl_->mu);
  std::string line = request_json;
  line.push_back('\n');
  std::size_t off = 0;
  while (off < line.size()) {
    ssize_t n = write(impl_->to_child, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw RuntimeFailure("worker '" + impl_->command + "': write failed (worker died?)");
    }
    off += std::size_t(n);
  }
  for (;;) {
    auto nl = impl_->buffer.find('\n');
    if (nl != std::string::npos) {
      std::string out = impl_->buffer.substr(0, nl);
      impl_->buffer.erase(0, nl + 1);
      return out;
    }
    char buf[65536];
    ssize_t n = read(impl_->from_child, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw RuntimeFailure("worker '" + impl_->command + "': read failed");
    }
    if (n == 0)
      throw RuntimeFailure("worker '" + impl_->command + "' exited before replying");
    impl_->buffer.append(buf, std::size_t(n));
  }
}

namespace {

json call(WorkerProcess& proc, const json& request) {
  json reply = json::parse(proc.call_line(request.dump()), nullptr, false);
  if (reply.is_discarded()) throw RuntimeFailure("worker sent malformed JSON");
  if (reply.contains("error")) throw RuntimeFailure("worker error: " + reply["error"].get<std::string>());
  return reply;
}

json image_json(const Eigen::ArrayXd& data, int h, int w, int c) {
  return {{"image", std::vector<double>(data.data(), data.data() + data.size())},
          {"h", h},
          {"w", w},
          {"c", c}};
}

Eigen::ArrayXd array_from(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::ArrayXd>(v.data(), Eigen::Index(v.size()));
}

}  // namespace

// ---------- WorkerExtractor ----------

WorkerExtractor::WorkerExtractor(const std::string& command)
    : proc_(std::make_shared<WorkerProcess>(command)) {
  json hello = call(*proc_, json{{"op", "hello"}});
  if (hello.value("kind", "") != "extractor")
    throw RuntimeFailure("worker is not an extractor: " + command);
  layer_ = hello.value("layer", 0);
  in_h_ = hello.at("input_h").get<int>();
  in_w_ = hello.at("input_w").get<int>();
  n_ = hello.at("n_tokens").get<int>();
  dk_ = hello.at("key_dim").get<int>();
  dc_ = hello.at("cls_dim").get<int>();
}

int WorkerExtractor::n_tokens(int, int) const { return n_; }
int WorkerExtractor::key_dim(int) const { return dk_; }
int WorkerExtractor::cls_dim(int) const { return dc_; }

BundleVar WorkerExtractor::extract(ad::Tape& tape, ad::Var x, int h, int w, int c) const {
  check_input_size(h, w);
  Eigen::ArrayXd image = tape.val(x);
  json reply = call(*proc_, json{{"op", "extract"}, {"h", h}, {"w", w}, {"c", c},
                                 {"image", std::vector<double>(image.data(), image.data() + image.size())}});
  Eigen::ArrayXd keys = array_from(reply.at("keys"));
  Eigen::ArrayXd cls = array_from(reply.at("cls"));
  if (keys.size() != Eigen::Index(n_) * dk_ || cls.size() != dc_)
    throw RuntimeFailure("worker returned wrong feature shapes");

  Eigen::ArrayXd packed(keys.size() + cls.size());
  packed << keys, cls;
  auto proc = proc_;
  int n = n_, dk = dk_, dc = dc_;
  Eigen::ArrayXd img_copy = image;
  ad::Var node = ad::custom(
      tape, {x}, std::move(packed), [proc, img_copy, n, dk, dc, h, w, c](const Eigen::ArrayXd& g) {
        Eigen::ArrayXd gk = g.head(Eigen::Index(n) * dk);
        Eigen::ArrayXd gc = g.tail(dc);
        json reply = call(*proc, json{{"op", "extract_vjp"},
                                      {"h", h},
                                      {"w", w},
                                      {"c", c},
                                      {"image", std::vector<double>(img_copy.data(),
                                                                    img_copy.data() + img_copy.size())},
                                      {"grad_keys", std::vector<double>(gk.data(), gk.data() + gk.size())},
                                      {"grad_cls", std::vector<double>(gc.data(), gc.data() + gc.size())}});
        return std::vector<Eigen::ArrayXd>{array_from(reply.at("grad_image"))};
      });
  BundleVar out;
  out.n = n_;
  out.dk = dk_;
  out.dc = dc_;
  out.keys = ad::slice(node, 0, n_ * dk_);
  out.cls = ad::slice(node, n_ * dk_, dc_);
  return out;
}

// ---------- WorkerEmbedder ----------

WorkerEmbedder::WorkerEmbedder(const std::string& command)
    : proc_(std::make_shared<WorkerProcess>(command)) {
  json hello = call(*proc_, json{{"op", "hello"}});
  if (hello.value("kind", "") != "embedder")
    throw RuntimeFailure("worker is not an embedder: " + command);
  model_ids_ = hello.at("model_ids").get<std::vector<std::string>>();
  part_dims_ = hello.at("part_dims").get<std::vector<int>>();
  in_h_ = hello.at("input_h").get<int>();
  in_w_ = hello.at("input_w").get<int>();
  if (model_ids_.size() != part_dims_.size())
    throw RuntimeFailure("worker handshake: model_ids/part_dims mismatch");
}

int WorkerEmbedder::embed_dim() const {
  int d = 0;
  for (int p : part_dims_) d += p;
  return d;
}

ad::Var WorkerEmbedder::embed_image(ad::Tape& tape, ad::Var x, int h, int w, int c) const {
  Eigen::ArrayXd image = tape.val(x);
  json reply = call(*proc_, json{{"op", "embed_image"}, {"h", h}, {"w", w}, {"c", c},
                                 {"image", std::vector<double>(image.data(), image.data() + image.size())}});
  Eigen::ArrayXd parts = array_from(reply.at("parts"));
  if (parts.size() != embed_dim()) throw RuntimeFailure("worker returned wrong embedding size");

  auto proc = proc_;
  Eigen::ArrayXd img_copy = image;
  ad::Var node = ad::custom(
      tape, {x}, std::move(parts), [proc, img_copy, h, w, c](const Eigen::ArrayXd& g) {
        json reply = call(*proc, json{{"op", "embed_image_vjp"},
                                      {"h", h},
                                      {"w", w},
                                      {"c", c},
                                      {"image", std::vector<double>(img_copy.data(),
                                                                    img_copy.data() + img_copy.size())},
                                      {"grad_parts", std::vector<double>(g.data(), g.data() + g.size())}});
        return std::vector<Eigen::ArrayXd>{array_from(reply.at("grad_image"))};
      });
  std::vector<ad::Var> part_vars;
  int off = 0;
  for (int d : part_dims_) {
    part_vars.push_back(ad::slice(node, off, d));
    off += d;
  }
  return embed_ensemble(tape, part_vars);
}

EmbeddingVector WorkerEmbedder::embed_text(const std::string& prompt) const {
  if (prompt.empty()) throw InvalidArgument("embed_text: empty prompt");
  json reply = call(*proc_, json{{"op", "embed_text"}, {"text", prompt}});
  Eigen::ArrayXd parts = array_from(reply.at("parts"));
  if (parts.size() != embed_dim()) throw RuntimeFailure("worker returned wrong embedding size");
  std::vector<Eigen::VectorXd> part_vecs;
  int off = 0;
  for (int d : part_dims_) {
    part_vecs.push_back(parts.segment(off, d).matrix());
    off += d;
  }
  return embed_ensemble(part_vecs);
}

}  // namespace sit
