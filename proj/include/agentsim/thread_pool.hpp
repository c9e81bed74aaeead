#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace agentsim {

class ThreadPool {
public:
  explicit ThreadPool(std::size_t workers);
  ~ThreadPool();

  ThreadPool(const ThreadPool &) = delete;
  ThreadPool &operator=(const ThreadPool &) = delete;

  void submit(std::function<void()> job);
  std::size_t size() const noexcept { return threads_.size(); }

  // Drains queued jobs, then joins. Idempotent.
  void shutdown();

private:
  void run();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

// Runs fn(i) for i in [0, n) on up to `parallelism` threads and waits.
void parallel_for(std::size_t n, std::size_t parallelism,
                  const std::function<void(std::size_t)> &fn);

} // namespace agentsim
