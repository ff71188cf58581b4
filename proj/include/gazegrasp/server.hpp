#pragma once

// Stream endpoint. One TCP port speaks two framings of the same messages:
// raw newline-delimited lines, or WebSocket text frames (one message per
// frame) when the first line is an HTTP upgrade request. Plain HTTP GETs
// are answered from an optional static directory.
//
// All I/O runs on one event loop thread; sessions live in a SessionRegistry
// and every connection that has sent a message for a session receives that
// session's outbound messages.

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "gazegrasp/error.hpp"
#include "gazegrasp/session.hpp"
#include "gazegrasp/wire.hpp"

namespace gazegrasp {

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;          // 0 picks a free port
  TimestampMs idle_tick_ms = 100;  // inject Tick after this much silence; 0 disables
  std::string static_dir;          // served for plain HTTP GET; empty disables
  std::size_t max_line_bytes = 1 << 20;
};

namespace server_detail {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace ws = beast::websocket;
using tcp = net::ip::tcp;

class Peer : public std::enable_shared_from_this<Peer> {
 public:
  virtual ~Peer() = default;
  virtual void send(std::string line) = 0;
  virtual void close() = 0;
};

}  // namespace server_detail

class Server {
 public:
  Server(SessionRegistry& registry, ServerOptions opts)
      : registry_(registry), opts_(std::move(opts)), acceptor_(ioc_), pacer_(ioc_) {}
  ~Server() { stop(); }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts the event loop thread. Returns the bound port.
  std::uint16_t start() {
    using server_detail::tcp;
    boost::system::error_code ec;
    const auto addr = server_detail::net::ip::make_address(opts_.host, ec);
    if (ec) throw Error(Errc::InvalidArgument, "bad serve.host '" + opts_.host + "'");
    const tcp::endpoint ep(addr, opts_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(tcp::acceptor::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(server_detail::net::socket_base::max_listen_connections, ec);
    if (ec) throw Error(Errc::IoError, "cannot listen on " + opts_.host + ":" + std::to_string(opts_.port) + ": " +
                                           ec.message());
    port_ = acceptor_.local_endpoint().port();
    accept();
    if (opts_.idle_tick_ms > 0) pace();
    running_ = true;
    thread_ = std::thread([this] { ioc_.run(); });
    return port_;
  }

  std::uint16_t port() const { return port_; }

  /// Stops accepting, closes every connection, flushes session logs.
  void stop() {
    if (!running_.exchange(false)) return;
    std::promise<void> closed;
    server_detail::net::post(ioc_, [this, &closed] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      pacer_.cancel();
      for (auto& w : peers_)
        if (auto p = w.lock()) p->close();
      closed.set_value();
    });
    closed.get_future().wait();
    ioc_.stop();
    if (thread_.joinable()) thread_.join();
    registry_.flush();
  }

 private:
  class LineConn;
  class WsConn;
  class Sniffer;

  void accept();

  void pace() {
    pacer_.expires_after(std::chrono::milliseconds(opts_.idle_tick_ms));
    pacer_.async_wait([this](boost::system::error_code ec) {
      if (ec) return;
      const auto now = std::chrono::steady_clock::now();
      for (auto& [id, a] : activity_) {
        const auto silent =
            std::chrono::duration_cast<std::chrono::milliseconds>(now - a.wall).count();
        if (silent < opts_.idle_tick_ms || subscribers_[id].empty()) continue;
        a.t += silent;
        a.wall = now;
        deliver(wire::Tick{id, a.t});
      }
      pace();
    });
  }

  void register_peer(const std::shared_ptr<server_detail::Peer>& p) {
    std::erase_if(peers_, [](const auto& w) { return w.expired(); });
    peers_.push_back(p);
  }

  void drop_peer(server_detail::Peer* p) {
    for (auto& [_, subs] : subscribers_) {
      std::erase_if(subs, [p](const auto& w) {
        auto s = w.lock();
        return !s || s.get() == p;
      });
    }
  }

  static std::string error_line(const std::string& session, TimestampMs t, Errc code, const std::string& what) {
    return wire::encode(wire::ErrorMsg{session, t, std::string(to_string(code)), what});
  }

  void on_line(const std::shared_ptr<server_detail::Peer>& from, std::string line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) return;
    wire::Message m;
    try {
      m = wire::decode(line);
    } catch (const Error& e) {
      from->send(error_line("-", 0, e.code(), e.what()));
      return;
    }
    if (!wire::is_inbound(m)) {
      from->send(error_line(wire::session_of(m), wire::time_of(m), Errc::InvalidArgument,
                            "only gaze, detections, control and tick messages are accepted"));
      return;
    }
    const std::string& id = wire::session_of(m);
    auto& subs = subscribers_[id];
    bool known = false;
    for (auto& w : subs)
      if (w.lock() == from) known = true;
    if (!known) subs.push_back(from);

    auto& a = activity_[id];
    a.t = std::max(a.t, wire::time_of(m));
    a.wall = std::chrono::steady_clock::now();
    deliver(std::move(m));
  }

  void deliver(wire::Message m) {
    const std::string id = wire::session_of(m);
    std::vector<wire::Message> out;
    try {
      out = registry_.process(m);
    } catch (const std::exception& e) {
      out.push_back(wire::ErrorMsg{id, wire::time_of(m), std::string(to_string(Errc::InvalidArgument)), e.what()});
    }
    auto& subs = subscribers_[id];
    std::erase_if(subs, [](const auto& w) { return w.expired(); });
    for (const auto& o : out) {
      const std::string line = wire::encode(o);
      for (auto& w : subs)
        if (auto p = w.lock()) p->send(line);
    }
  }

  std::string static_body(const std::string& target, std::string& content_type) const {
    namespace fs = std::filesystem;
    if (opts_.static_dir.empty()) return {};
    std::string rel = target.substr(0, target.find('?'));
    if (rel.empty() || rel == "/") rel = "/index.html";
    if (rel.find("..") != std::string::npos) return {};
    const fs::path p = fs::path(opts_.static_dir) / rel.substr(1);
    std::ifstream in(p, std::ios::binary);
    if (!in) return {};
    const auto ext = p.extension().string();
    content_type = ext == ".html" ? "text/html"
                   : ext == ".js" ? "text/javascript"
                   : ext == ".css" ? "text/css"
                   : ext == ".json" ? "application/json"
                   : ext == ".svg" ? "image/svg+xml"
                                   : "application/octet-stream";
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  struct Activity {
    TimestampMs t = 0;
    std::chrono::steady_clock::time_point wall;
  };

  SessionRegistry& registry_;
  ServerOptions opts_;
  server_detail::net::io_context ioc_;
  server_detail::tcp::acceptor acceptor_;
  server_detail::net::steady_timer pacer_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  std::uint16_t port_ = 0;
  std::vector<std::weak_ptr<server_detail::Peer>> peers_;
  std::map<std::string, std::vector<std::weak_ptr<server_detail::Peer>>> subscribers_;
  std::map<std::string, Activity> activity_;
};

class Server::LineConn : public server_detail::Peer {
 public:
  LineConn(Server& srv, server_detail::tcp::socket sock, std::string pending)
      : srv_(srv), sock_(std::move(sock)), in_(std::move(pending)) {}

  void start() { drain(); }

  void send(std::string line) override {
    if (closed_) return;
    out_.push_back(std::move(line) + "\n");
    if (out_.size() == 1) write();
  }

  void close() override {
    if (closed_) return;
    closed_ = true;
    boost::system::error_code ec;
    sock_.shutdown(server_detail::tcp::socket::shutdown_both, ec);
    sock_.close(ec);
    srv_.drop_peer(this);
  }

 private:
  // Handles complete lines already buffered, then reads more.
  void drain() {
    for (auto nl = in_.find('\n'); nl != std::string::npos; nl = in_.find('\n')) {
      std::string line = in_.substr(0, nl);
      in_.erase(0, nl + 1);
      srv_.on_line(shared_from_this(), std::move(line));
      if (closed_) return;
    }
    read();
  }

  void read() {
    auto self = shared_from_this();
    server_detail::net::async_read_until(
        sock_, server_detail::net::dynamic_buffer(in_, srv_.opts_.max_line_bytes), '\n',
        [this, self](boost::system::error_code ec, std::size_t) {
          if (closed_) return;
          if (ec == server_detail::net::error::not_found) {
            send(error_line("-", 0, Errc::ParseError, "line exceeds the maximum message size"));
            in_.clear();
            read();
            return;
          }
          if (ec) {
            close();
            return;
          }
          drain();
        });
  }

  void write() {
    auto self = shared_from_this();
    server_detail::net::async_write(sock_, server_detail::net::buffer(out_.front()),
                                    [this, self](boost::system::error_code ec, std::size_t) {
                                      if (ec) {
                                        close();
                                        return;
                                      }
                                      out_.pop_front();
                                      if (!out_.empty() && !closed_) write();
                                    });
  }

  Server& srv_;
  server_detail::tcp::socket sock_;
  std::string in_;
  std::deque<std::string> out_;
  bool closed_ = false;
};

class Server::WsConn : public server_detail::Peer {
 public:
  WsConn(Server& srv, server_detail::tcp::socket sock) : srv_(srv), ws_(std::move(sock)) {}

  void start(server_detail::http::request<server_detail::http::string_body> req) {
    auto self = shared_from_this();
    ws_.text(true);
    ws_.async_accept(req, [this, self](boost::system::error_code ec) {
      if (ec) {
        close();
        return;
      }
      read();
    });
  }

  void send(std::string line) override {
    if (closed_) return;
    out_.push_back(std::move(line));
    if (out_.size() == 1) write();
  }

  void close() override {
    if (closed_) return;
    closed_ = true;
    boost::system::error_code ec;
    ws_.next_layer().shutdown(server_detail::tcp::socket::shutdown_both, ec);
    ws_.next_layer().close(ec);
    srv_.drop_peer(this);
  }

 private:
  void read() {
    auto self = shared_from_this();
    ws_.async_read(buf_, [this, self](boost::system::error_code ec, std::size_t) {
      if (closed_) return;
      if (ec) {
        close();
        return;
      }
      const std::string text = server_detail::beast::buffers_to_string(buf_.data());
      buf_.consume(buf_.size());
      std::size_t start = 0;
      while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        const std::string line = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        srv_.on_line(shared_from_this(), line);
        if (closed_ || nl == std::string::npos) break;
        start = nl + 1;
      }
      if (!closed_) read();
    });
  }

  void write() {
    auto self = shared_from_this();
    ws_.async_write(server_detail::net::buffer(out_.front()), [this, self](boost::system::error_code ec, std::size_t) {
      if (ec) {
        close();
        return;
      }
      out_.pop_front();
      if (!out_.empty() && !closed_) write();
    });
  }

  Server& srv_;
  server_detail::ws::stream<server_detail::tcp::socket> ws_;
  server_detail::beast::flat_buffer buf_;
  std::deque<std::string> out_;
  bool closed_ = false;
};

// Reads the first line to pick the framing.
class Server::Sniffer : public std::enable_shared_from_this<Server::Sniffer> {
 public:
  Sniffer(Server& srv, server_detail::tcp::socket sock) : srv_(srv), sock_(std::move(sock)) {}

  void start() {
    auto self = shared_from_this();
    server_detail::net::async_read_until(
        sock_, server_detail::net::dynamic_buffer(first_, srv_.opts_.max_line_bytes), '\n',
        [this, self](boost::system::error_code ec, std::size_t) {
          if (ec) return;
          if (first_.rfind("GET ", 0) == 0) {
            http_request();
          } else {
            auto conn = std::make_shared<LineConn>(srv_, std::move(sock_), std::move(first_));
            srv_.register_peer(conn);
            conn->start();
          }
        });
  }

 private:
  void http_request() {
    namespace net = server_detail::net;
    auto out = buf_.prepare(first_.size());
    net::buffer_copy(out, net::buffer(first_));
    buf_.commit(first_.size());
    auto self = shared_from_this();
    server_detail::http::async_read(sock_, buf_, req_, [this, self](boost::system::error_code ec, std::size_t) {
      if (ec) return;
      if (server_detail::ws::is_upgrade(req_)) {
        auto conn = std::make_shared<WsConn>(srv_, std::move(sock_));
        srv_.register_peer(conn);
        conn->start(std::move(req_));
        return;
      }
      serve_static();
    });
  }

  void serve_static() {
    namespace http = server_detail::http;
    std::string type = "text/plain";
    std::string body = srv_.static_body(std::string(req_.target()), type);
    auto res = std::make_shared<http::response<http::string_body>>(body.empty() ? http::status::not_found
                                                                                : http::status::ok,
                                                                   req_.version());
    res->set(http::field::content_type, type);
    res->body() = body.empty() ? "not found\n" : std::move(body);
    res->keep_alive(false);
    res->prepare_payload();
    auto self = shared_from_this();
    http::async_write(sock_, *res, [this, self, res](boost::system::error_code, std::size_t) {
      boost::system::error_code ec;
      sock_.shutdown(server_detail::tcp::socket::shutdown_both, ec);
    });
  }

  Server& srv_;
  server_detail::tcp::socket sock_;
  std::string first_;
  server_detail::beast::flat_buffer buf_;
  server_detail::http::request<server_detail::http::string_body> req_;
};

inline void Server::accept() {
  acceptor_.async_accept([this](boost::system::error_code ec, server_detail::tcp::socket sock) {
    if (ec) return;
    std::make_shared<Sniffer>(*this, std::move(sock))->start();
    accept();
  });
}

}  // namespace gazegrasp
