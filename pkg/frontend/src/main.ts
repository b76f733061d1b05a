import { SocketLike, ViewerClient } from './client.js';
import { buildUi } from './ui.js';

function serverUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('server');
  if (fromQuery !== null && fromQuery !== '') {
    return fromQuery;
  }
  return `ws://${window.location.hostname || 'localhost'}:8765`;
}

// DOM WebSocket handlers take an event argument SocketLike callbacks ignore,
// so the structural check needs a nudge; the client only ever writes to them.
const client = new ViewerClient((url) => new WebSocket(url) as unknown as SocketLike);
const root = document.getElementById('app');
if (root !== null) {
  buildUi(root, client);
  client.connect(serverUrl());
}
