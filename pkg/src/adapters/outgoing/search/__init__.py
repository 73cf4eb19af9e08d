"""Search adapters: Serper image and web search, mock backends, relevance scorers."""
