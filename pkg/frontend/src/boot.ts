import { ServiceClient } from "./api.js";
import { initApp } from "./app.js";

// Service base URL: ?service=http://host:port, or same-origin by default.
const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
initApp(root, { client: new ServiceClient(baseUrl) });
