#include <catch_amalgamated.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "gazegrasp/server.hpp"
#include "support/demo.hpp"

using namespace gazegrasp;
namespace fs = std::filesystem;
namespace net = boost::asio;
namespace beast = boost::beast;
using tcp = net::ip::tcp;
using namespace std::chrono_literals;

namespace {

SessionSetup base_setup() {
  SessionSetup s;
  s.config = demo::config();
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gazegrasp_srv_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Blocking line client with a per-read deadline.
class LineClient {
 public:
  explicit LineClient(std::uint16_t port) : sock_(ioc_) {
    sock_.connect({net::ip::make_address("127.0.0.1"), port});
  }

  void send(const std::string& line) { net::write(sock_, net::buffer(line + "\n")); }

  std::optional<std::string> read_line(std::chrono::milliseconds timeout = 5000ms) {
    std::optional<std::string> out;
    net::async_read_until(sock_, net::dynamic_buffer(buf_), '\n', [&](boost::system::error_code ec, std::size_t n) {
      if (ec) return;
      out = buf_.substr(0, n - 1);
      buf_.erase(0, n);
    });
    ioc_.restart();
    ioc_.run_for(timeout);
    if (!out) {
      sock_.cancel();
      ioc_.restart();
      ioc_.run();
    }
    return out;
  }

  /// Reads until a line containing `needle` arrives and the stream goes
  /// quiet; returns every line read.
  std::vector<std::string> read_until(const std::string& needle) {
    std::vector<std::string> lines;
    while (auto l = read_line()) {
      lines.push_back(*l);
      if (l->find(needle) != std::string::npos) {
        // Whatever the same message produced after the marker.
        while (auto rest = read_line(300ms)) lines.push_back(*rest);
        return lines;
      }
    }
    FAIL("timed out waiting for " << needle << " after " << lines.size() << " lines; last: " << (lines.empty() ? "" : lines.back()));
    return lines;
  }

 private:
  net::io_context ioc_;
  tcp::socket sock_;
  std::string buf_;
};

std::vector<wire::Message> decode_all(const std::vector<std::string>& lines) {
  std::vector<wire::Message> out;
  for (const auto& l : lines) out.push_back(wire::decode(l));
  return out;
}

// A command the session rejects; its error reply marks the end of a batch.
wire::Control marker(const std::string& session, TimestampMs t) { return {session, t, "end_of_batch", {}}; }

}  // namespace

TEST_CASE("two line-protocol sessions with different snapping modes", "[server]") {
  const auto logs = temp_dir("two");
  std::vector<std::string> got_a, got_b;
  {
    SessionRegistry reg(base_setup(), logs.string());
    Server srv(reg, {.idle_tick_ms = 0});
    const auto port = srv.start();
    LineClient a(port), b(port);

    auto trace_a = demo::canonical_trace("a");
    auto trace_b = demo::canonical_trace("b");
    trace_b.insert(trace_b.begin() + 3, wire::Control{"b", 3, "set_snapping", {{"enabled", false}}});
    trace_a.push_back(marker("a", 20'000));
    trace_b.push_back(marker("b", 20'000));
    // Interleave the two streams line by line.
    for (std::size_t i = 0; i < std::max(trace_a.size(), trace_b.size()); ++i) {
      if (i < trace_a.size()) a.send(wire::encode(trace_a[i]));
      if (i < trace_b.size()) b.send(wire::encode(trace_b[i]));
    }
    got_a = a.read_until("end_of_batch");
    got_b = b.read_until("end_of_batch");
    srv.stop();
  }

  int snapped_a = 0, cursors_b = 0;
  for (const auto& m : decode_all(got_a)) {
    CHECK(wire::session_of(m) == "a");
    if (const auto* c = std::get_if<wire::CursorUpdate>(&m)) snapped_a += c->snapped != c->raw;
  }
  for (const auto& m : decode_all(got_b)) {
    CHECK(wire::session_of(m) == "b");
    if (const auto* c = std::get_if<wire::CursorUpdate>(&m)) {
      ++cursors_b;
      CHECK(c->snapped == c->raw);
    }
  }
  CHECK(snapped_a > 0);
  CHECK(cursors_b > 0);

  // Both sessions completed a pick and a place.
  for (const auto* got : {&got_a, &got_b}) {
    int picks = 0, places = 0;
    for (const auto& l : *got) {
      picks += l.find("\"event\":\"PickDone\"") != std::string::npos;
      places += l.find("\"event\":\"PlaceDone\"") != std::string::npos;
    }
    CHECK(picks == 1);
    CHECK(places == 1);
  }

  // Each log holds one session only, and replaying it reproduces exactly what
  // the client received.
  for (const auto& [name, got] : {std::pair{"a", got_a}, std::pair{"b", got_b}}) {
    const auto path = logs / (std::string(name) + ".jsonl");
    REQUIRE(fs::exists(path));
    std::ifstream f(path);
    std::string line;
    while (std::getline(f, line)) CHECK(wire::session_of(wire::decode(line)) == name);
    std::ifstream again(path);
    std::ostringstream transcript;
    replay(again, transcript, base_setup());
    std::string live;
    for (const auto& l : got) live += l + "\n";
    CHECK(transcript.str() == live);
  }
  fs::remove_all(logs);
}

TEST_CASE("a malformed line gets an error reply and the connection stays up", "[server]") {
  SessionRegistry reg(base_setup());
  Server srv(reg, {.idle_tick_ms = 0});
  LineClient c(srv.start());
  c.send("this is not json");
  const auto err = c.read_line();
  REQUIRE(err);
  const auto e = wire::decode(*err);
  REQUIRE(std::holds_alternative<wire::ErrorMsg>(e));
  CHECK(std::get<wire::ErrorMsg>(e).code == "ParseError");

  c.send(wire::encode(wire::CursorUpdate{"m", 1, {}, {}, std::nullopt, 0}));
  const auto rej = c.read_line();
  REQUIRE(rej);
  CHECK(std::get<wire::ErrorMsg>(wire::decode(*rej)).code == "InvalidArgument");

  c.send(wire::encode(wire::Tick{"m", 0}));
  const auto state = c.read_line();
  REQUIRE(state);
  CHECK(std::holds_alternative<wire::State>(wire::decode(*state)));
  srv.stop();
}

TEST_CASE("WebSocket clients speak the same messages", "[server]") {
  SessionRegistry reg(base_setup());
  Server srv(reg, {.idle_tick_ms = 0});
  const auto port = srv.start();

  net::io_context ioc;
  beast::websocket::stream<tcp::socket> ws(ioc);
  ws.next_layer().connect({net::ip::make_address("127.0.0.1"), port});
  ws.handshake("127.0.0.1:" + std::to_string(port), "/stream");
  ws.text(true);
  ws.write(net::buffer(wire::encode(wire::Tick{"w", 0})));
  beast::flat_buffer buf;
  ws.read(buf);
  const auto m = wire::decode(beast::buffers_to_string(buf.data()));
  REQUIRE(std::holds_alternative<wire::State>(m));
  CHECK(wire::session_of(m) == "w");

  buf.clear();
  ws.write(net::buffer(std::string("{bad")));
  ws.read(buf);
  CHECK(std::get<wire::ErrorMsg>(wire::decode(beast::buffers_to_string(buf.data()))).code == "ParseError");
  ws.close(beast::websocket::close_code::normal);
  srv.stop();
}

TEST_CASE("plain HTTP GET serves the static directory", "[server]") {
  const auto dir = temp_dir("static");
  std::ofstream(dir / "index.html") << "<html>console</html>";
  SessionRegistry reg(base_setup());
  Server srv(reg, {.idle_tick_ms = 0, .static_dir = dir.string()});
  const auto port = srv.start();

  auto get = [&](const std::string& target) {
    net::io_context ioc;
    tcp::socket sock(ioc);
    sock.connect({net::ip::make_address("127.0.0.1"), port});
    beast::http::request<beast::http::empty_body> req{beast::http::verb::get, target, 11};
    req.set(beast::http::field::host, "localhost");
    beast::http::write(sock, req);
    beast::flat_buffer buf;
    beast::http::response<beast::http::string_body> res;
    beast::http::read(sock, buf, res);
    return res;
  };
  const auto ok = get("/");
  CHECK(ok.result() == beast::http::status::ok);
  CHECK(ok.body() == "<html>console</html>");
  CHECK(get("/../etc/passwd").result() == beast::http::status::not_found);
  CHECK(get("/missing.js").result() == beast::http::status::not_found);
  srv.stop();
  fs::remove_all(dir);
}

TEST_CASE("silent sessions are ticked so heartbeats keep coming", "[server]") {
  SessionRegistry reg(base_setup());
  Server srv(reg, {.idle_tick_ms = 50});
  LineClient c(srv.start());
  c.send(wire::encode(wire::Tick{"p", 0}));
  const auto first = c.read_line();
  REQUIRE(first);
  CHECK(std::get<wire::State>(wire::decode(*first)).t == 0);
  // No further input: the pacer advances session time with wall time.
  const auto next = c.read_line(3000ms);
  REQUIRE(next);
  const auto s = wire::decode(*next);
  REQUIRE(std::holds_alternative<wire::State>(s));
  CHECK(std::get<wire::State>(s).t >= 1000);
  srv.stop();
}
