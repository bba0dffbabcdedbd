import { GatewayClient } from "./api.js";
import { ConsoleApp } from "./app.js";

// Served by the gateway itself, the origin is the API; served elsewhere, set
// window.HEALTHGATE_BASE_URL before this module loads.
declare global {
  interface Window {
    HEALTHGATE_BASE_URL?: string;
  }
}

const base = window.HEALTHGATE_BASE_URL ?? window.location.origin;
const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
new ConsoleApp(root, new GatewayClient(base)).mount();
