import { mount } from "./panel.js";

// API base: ?api=http://127.0.0.1:PORT wins, else the port mevo-peer
// examples use. The page is static; it can be served from anywhere
// (file://, python -m http.server, ...) as long as it can reach the
// peer's loopback control port.
const params = new URLSearchParams(window.location.search);
const apiBase = params.get("api") ?? "http://127.0.0.1:8700";

mount(document.getElementById("app")!, apiBase.replace(/\/$/, ""));
