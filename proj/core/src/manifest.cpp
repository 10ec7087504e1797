#include "sit/manifest.hpp"

#include <fstream>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "sit/errors.hpp"

namespace sit {

namespace {

nlohmann::json losses_json(const LossTerms& l) {
  return {{"cont", l.cont}, {"ssim", l.ssim},       {"style", l.style},
          {"sem", l.sem},   {"sem_active", l.sem_active}, {"rng", l.rng},
          {"id", l.id},     {"total", l.total}};
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  nlohmann::json j;
  j["status"] = m.status;
  if (!m.error.empty()) j["error"] = m.error;
  j["mode"] = m.mode;
  j["config"] = m.config;
  j["final_losses"] = losses_json(m.final_losses);
  j["guided_steps"] = m.guided_steps;
  j["restarts"] = m.restarts;
  j["wall_time_s"] = m.wall_time_s;
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& [p, hash] : m.outputs) outs.push_back({{"path", p}, {"sha256", hash}});
  j["outputs"] = outs;
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write manifest: " + path.string());
  os << j.dump(2) << "\n";
}

void write_trajectory_log(const std::filesystem::path& path, const TrajectoryRecord& record) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write trajectory log: " + path.string());
  for (const StepRecord& s : record.steps) {
    nlohmann::json j;
    j["t"] = s.t;
    j["t_orig"] = s.t_orig;
    j["resample"] = s.resample;
    j["losses"] = losses_json(s.losses);
    j["grad_norm"] = s.grad_norm;
    os << j.dump() << "\n";
  }
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot hash missing file: " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw RuntimeFailure("sha256: allocation failure");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[65536];
  while (is) {
    is.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, std::size_t(is.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace sit
