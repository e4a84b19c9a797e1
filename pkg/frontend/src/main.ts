// App shell: hash routing between the three views, one-time token
// prompt held in session storage.

import { ApiClient, getToken, setToken } from "./api.js";
import { el } from "./render.js";
import { DetailView } from "./views/detail.js";
import { FeedView } from "./views/feed.js";
import { SearchView } from "./views/search.js";

async function boot(): Promise<void> {
  const api = await ApiClient.fromConfig();
  const outlet = document.getElementById("app");
  if (!outlet) throw new Error("missing #app mount point");

  const openDetail = (emailId: string): void => {
    window.location.hash = `#/email/${emailId}`;
  };
  const pivot = (query: string): void => {
    window.location.hash = "#/search";
    search.setQuery(query);
  };

  const search = new SearchView(api, openDetail);
  const detail = new DetailView(api, pivot);
  const feed = new FeedView(api, openDetail);

  const nav = el("nav", {}, [
    el("a", { href: "#/search" }, ["Search"]),
    el("a", { href: "#/feed" }, ["Flag feed"]),
  ]);
  const tokenBtn = el("button", { class: "token-btn" }, [
    getToken() ? "API token set" : "Set API token",
  ]);
  tokenBtn.addEventListener("click", () => {
    const token = window.prompt("API bearer token (kept in session storage):", getToken());
    if (token !== null) {
      setToken(token);
      tokenBtn.textContent = token ? "API token set" : "Set API token";
    }
  });
  nav.appendChild(tokenBtn);
  document.body.insertBefore(nav, outlet);

  const route = (): void => {
    const hash = window.location.hash || "#/search";
    outlet.replaceChildren();
    feed.stop();
    const emailMatch = hash.match(/^#\/email\/([0-9a-f]{64})$/);
    if (emailMatch) {
      outlet.appendChild(detail.root);
      void detail.show(emailMatch[1]);
    } else if (hash.startsWith("#/feed")) {
      outlet.appendChild(feed.root);
      feed.start();
    } else {
      outlet.appendChild(search.root);
    }
  };
  window.addEventListener("hashchange", route);
  route();
}

void boot();
