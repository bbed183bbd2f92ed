#pragma once

#include <memory>
#include <string>

#include "stam/service.hpp"

namespace stam::service {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  double speed = 1.0;       // simulated seconds per wall-clock second
  bool handle_signals = false;  // stop on SIGINT / SIGTERM
};

/// WebSocket front end for ServiceCore. One thread runs the accept loop, the
/// sessions and the simulation timer; fits run on a separate worker thread.
class WsServer {
 public:
  /// Binds immediately. Throws Errc::BindFailure.
  WsServer(ServiceConfig config, ServerOptions options);
  ~WsServer();

  WsServer(const WsServer&) = delete;
  WsServer& operator=(const WsServer&) = delete;

  unsigned short port() const;
  /// Serves until stop() is called.
  void run();
  /// Safe to call from any thread.
  void stop();

 private:
  friend class Connection;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stam::service
