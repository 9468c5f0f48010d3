"""Memory-budgeted rematerialization scheduling for computation graphs."""
