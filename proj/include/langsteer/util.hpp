#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace langsteer {

/// Linear interpolation between closest ranks (numpy's default). `q` in [0, 100].
double percentile(std::vector<double> values, double q);

/// Mean of the two central order statistics for even counts.
double median(std::vector<double> values);

/// Calls `fn(line_number, parsed_object)` for each non-blank line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a64(const std::string& data, std::uint64_t seed = 0xcbf29ce484222325ULL);

int default_thread_count();

/// Runs fn(i) for i in [0, n) over up to `threads` workers. Each index runs
/// exactly once; callers write results by index to keep reductions ordered.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace langsteer
