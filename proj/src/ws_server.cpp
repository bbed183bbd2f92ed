#include "stam/ws_server.hpp"

#include <chrono>
#include <csignal>
#include <deque>
#include <map>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "stam/error.hpp"

namespace stam::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

// A client that stops reading is dropped rather than buffered without bound.
constexpr std::size_t kMaxQueued = 1024;

}  // namespace

class Connection;

struct WsServer::Impl {
  Impl(ServiceConfig config, const ServerOptions& options);

  void accept();
  void schedule_tick();
  void on_tick(beast::error_code ec);
  void deliver(const Outbound& out);
  void dispatch(std::optional<Deferred> job);
  void drop(SessionId id);

  net::io_context ioc{1};
  ServiceCore core;
  tcp::acceptor acceptor{ioc};
  net::steady_timer timer{ioc};
  net::signal_set signals{ioc};
  bool handle_signals = false;
  std::chrono::steady_clock::duration period;
  std::chrono::steady_clock::time_point next_tick;
  std::map<SessionId, std::shared_ptr<Connection>> connections;
  // Declared last so it joins before the members its jobs touch go away.
  net::thread_pool workers{1};
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, WsServer::Impl& server) : ws_(std::move(socket)), server_(server) {}

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->id_ = self->server_.core.open_session();
      self->server_.connections[self->id_] = self;
      self->read();
    });
  }

  void send(std::string text) {
    if (closed_) return;
    if (queue_.size() >= kMaxQueued) {
      close();
      return;
    }
    queue_.push_back(std::move(text));
    if (queue_.size() == 1) write();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    queue_.clear();
    server_.drop(id_);
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->server_.drop(self->id_);
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      HandleResult result = self->server_.core.handle(self->id_, text);
      for (const Outbound& o : result.replies) self->server_.deliver(o);
      self->server_.dispatch(std::move(result.deferred));
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->queue_.clear();
        self->server_.drop(self->id_);
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  WsServer::Impl& server_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  SessionId id_ = 0;
  bool closed_ = false;
};

WsServer::Impl::Impl(ServiceConfig config, const ServerOptions& options)
    : core(std::move(config)), handle_signals(options.handle_signals) {
  if (!(options.speed > 0.0)) throw Error(Errc::InvalidArgument, "speed must be positive");
  period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(core.world().dt / options.speed));
  beast::error_code ec;
  const auto address = net::ip::make_address(options.address, ec);
  if (ec) throw Error(Errc::BindFailure, "bad address '" + options.address + "': " + ec.message());
  const tcp::endpoint endpoint(address, options.port);
  acceptor.open(endpoint.protocol(), ec);
  if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acceptor.bind(endpoint, ec);
  if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw Error(Errc::BindFailure, "cannot listen on " + options.address + ":" + std::to_string(options.port) +
                                              ": " + ec.message());
}

void WsServer::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<Connection>(std::move(socket), *this)->start();
    accept();
  });
}

void WsServer::Impl::schedule_tick() {
  next_tick += period;
  timer.expires_at(next_tick);
  timer.async_wait([this](beast::error_code ec) { on_tick(ec); });
}

void WsServer::Impl::on_tick(beast::error_code ec) {
  if (ec) return;
  for (const Outbound& o : core.advance()) deliver(o);
  // After a stall, resume from now instead of replaying the missed ticks.
  const auto now = std::chrono::steady_clock::now();
  if (next_tick + period < now) next_tick = now;
  schedule_tick();
}

void WsServer::Impl::deliver(const Outbound& out) {
  const auto it = connections.find(out.session);
  if (it != connections.end()) it->second->send(out.text);
}

void WsServer::Impl::dispatch(std::optional<Deferred> job) {
  if (!job) return;
  net::post(workers, [this, job = std::move(*job)]() {
    WireMessage result = job.run();
    net::post(ioc, [this, id = job.session, result = std::move(result)]() mutable {
      if (auto out = core.complete(id, std::move(result))) deliver(*out);
    });
  });
}

void WsServer::Impl::drop(SessionId id) {
  if (connections.erase(id)) core.close_session(id);
}

WsServer::WsServer(ServiceConfig config, ServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(config), options)) {}

WsServer::~WsServer() {
  stop();
  impl_->workers.join();
}

unsigned short WsServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void WsServer::run() {
  if (impl_->handle_signals) {
    impl_->signals.add(SIGINT);
    impl_->signals.add(SIGTERM);
    impl_->signals.async_wait([this](beast::error_code ec, int) {
      if (!ec) impl_->ioc.stop();
    });
  }
  impl_->accept();
  impl_->next_tick = std::chrono::steady_clock::now();
  impl_->schedule_tick();
  impl_->ioc.run();
}

void WsServer::stop() { impl_->ioc.stop(); }

}  // namespace stam::service
